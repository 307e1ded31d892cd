#include "driftprobe/activation_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <fcntl.h>
#include <unistd.h>

#include <json.hpp>

#include "driftprobe/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "actbin layout assumes a little-endian host");

namespace driftprobe {

RecordKey RecordKey::of(const ActivationRecord& rec) {
    return {rec.context_id, rec.turn, rec.item_id,
            rec.answer ? to_string(*rec.answer) : "none", rec.layer};
}

std::string RecordKey::str() const {
    return context_id + "@" + std::to_string(turn) + "/" + item_id + "/" + answer + "/L" +
           std::to_string(layer);
}

static std::filesystem::path bin_path(const std::filesystem::path& base) {
    auto p = base;
    p += ".actbin";
    return p;
}
static std::filesystem::path manifest_path(const std::filesystem::path& base) {
    auto p = base;
    p += ".manifest.json";
    return p;
}
static std::filesystem::path lock_path(const std::filesystem::path& base) {
    auto p = base;
    p += ".lock";
    return p;
}

static void acquire_lock(const std::filesystem::path& base) {
    const auto lp = lock_path(base);
    const int fd = ::open(lp.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        throw StoreError("store " + base.string() + " is locked by a writer (" + lp.string() + ")");
    }
    ::close(fd);
}

void ActivationStore::load_manifest(const std::filesystem::path& mpath) {
    std::ifstream in(mpath);
    if (!in) {
        throw StoreError("cannot open manifest " + mpath.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw StoreError(mpath.string() + ": " + e.what());
    }
    try {
        descriptor_.backend_id = doc.at("backend_id").get<std::string>();
        descriptor_.hidden_dim = doc.at("hidden_dim").get<int>();
        descriptor_.n_layers = doc.at("n_layers").get<int>();
        descriptor_.template_family = doc.value("template_family", "");
        uint64_t prev = 0;
        bool first = true;
        for (const auto& r : doc.at("records")) {
            RecordKey key{r.at("context_id").get<std::string>(), r.at("turn").get<int>(),
                          r.at("item_id").get<std::string>(), r.at("answer").get<std::string>(),
                          r.at("layer").get<int>()};
            const auto offset = r.at("offset").get<uint64_t>();
            if (!first && offset <= prev) {
                throw StoreError("manifest offsets not strictly increasing at " + key.str());
            }
            first = false;
            prev = offset;
            index_[key] = offset;
        }
    } catch (const nlohmann::json::exception& e) {
        throw StoreError(mpath.string() + ": " + e.what());
    }
}

ActivationStore ActivationStore::open_for_write(const std::filesystem::path& base,
                                                const BackendDescriptor& descriptor) {
    acquire_lock(base);
    ActivationStore store;
    store.base_ = base;
    store.writable_ = true;
    store.locked_ = true;
    store.descriptor_ = descriptor;

    const auto mpath = manifest_path(base);
    if (std::filesystem::exists(mpath)) {
        store.index_.clear();
        store.load_manifest(mpath);
        if (store.descriptor_.backend_id != descriptor.backend_id ||
            store.descriptor_.hidden_dim != descriptor.hidden_dim ||
            store.descriptor_.n_layers != descriptor.n_layers) {
            const auto lp = lock_path(base);
            std::filesystem::remove(lp);
            throw StoreError("store " + base.string() + " belongs to backend \"" +
                             store.descriptor_.backend_id + "\", not \"" + descriptor.backend_id + "\"");
        }
    }
    const auto bpath = bin_path(base);
    store.end_offset_ = std::filesystem::exists(bpath) ? std::filesystem::file_size(bpath) : 0;
    store.out_.open(bpath, std::ios::binary | std::ios::app);
    if (!store.out_) {
        std::filesystem::remove(lock_path(base));
        throw StoreError("cannot open " + bpath.string() + " for writing");
    }
    store.in_.open(bpath, std::ios::binary);
    return store;
}

ActivationStore ActivationStore::open_for_read(const std::filesystem::path& base) {
    if (std::filesystem::exists(lock_path(base))) {
        throw StoreError("store " + base.string() + " is locked by a writer");
    }
    ActivationStore store;
    store.base_ = base;
    store.load_manifest(manifest_path(base));
    const auto bpath = bin_path(base);
    if (!std::filesystem::exists(bpath)) {
        throw StoreError("missing data file " + bpath.string());
    }
    const uint64_t fsize = std::filesystem::file_size(bpath);
    const uint64_t row = static_cast<uint64_t>(store.descriptor_.hidden_dim) * sizeof(float);
    for (const auto& [key, offset] : store.index_) {
        if (offset + row > fsize) {
            throw StoreError("record " + key.str() + " points past end of " + bpath.string());
        }
    }
    store.end_offset_ = fsize;
    store.in_.open(bpath, std::ios::binary);
    return store;
}

ActivationStore::ActivationStore(ActivationStore&& other) noexcept {
    base_ = std::move(other.base_);
    descriptor_ = std::move(other.descriptor_);
    writable_ = other.writable_;
    dirty_ = other.dirty_;
    locked_ = other.locked_;
    index_ = std::move(other.index_);
    end_offset_ = other.end_offset_;
    out_ = std::move(other.out_);
    in_ = std::move(other.in_);
    other.writable_ = false;
    other.locked_ = false;
    other.dirty_ = false;
}

ActivationStore::~ActivationStore() {
    if (writable_) {
        try {
            flush();
        } catch (...) {
            // destructor must not throw; the manifest can be rebuilt by rerunning extract
        }
    }
    if (locked_) {
        std::error_code ec;
        std::filesystem::remove(lock_path(base_), ec);
    }
}

std::string ActivationStore::put(const ActivationRecord& record) {
    if (!writable_) {
        throw StoreError("store " + base_.string() + " opened read-only");
    }
    if (record.vector.size() != static_cast<size_t>(descriptor_.hidden_dim)) {
        throw ValidationError("record dimension " + std::to_string(record.vector.size()) +
                              " does not match store hidden_dim " +
                              std::to_string(descriptor_.hidden_dim));
    }
    const RecordKey key = RecordKey::of(record);
    std::lock_guard<std::mutex> lock(io_mutex_);
    out_.write(reinterpret_cast<const char*>(record.vector.data()),
               static_cast<std::streamsize>(record.vector.size() * sizeof(float)));
    out_.flush();
    if (!out_) {
        throw StoreError("write failed for " + key.str());
    }
    index_[key] = end_offset_;
    end_offset_ += record.vector.size() * sizeof(float);
    dirty_ = true;
    return key.str();
}

ActivationRecord ActivationStore::read_at(const RecordKey& key, uint64_t offset) const {
    const size_t dim = static_cast<size_t>(descriptor_.hidden_dim);
    ActivationRecord rec;
    rec.context_id = key.context_id;
    rec.turn = key.turn;
    rec.item_id = key.item_id;
    rec.answer = key.answer == "none" ? std::nullopt
                                      : std::optional<Answer>(answer_from_string(key.answer));
    rec.layer = key.layer;
    rec.vector.resize(dim);

    std::lock_guard<std::mutex> lock(io_mutex_);
    if (offset + dim * sizeof(float) > end_offset_) {
        throw StoreError("corrupt store entry " + key.str() + ": offset past end of data");
    }
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(offset));
    in_.read(reinterpret_cast<char*>(rec.vector.data()),
             static_cast<std::streamsize>(dim * sizeof(float)));
    if (!in_) {
        throw StoreError("corrupt store entry " + key.str() + ": short read");
    }
    for (float v : rec.vector) {
        if (!std::isfinite(v)) {
            throw StoreError("corrupt store entry " + key.str() + ": non-finite value");
        }
    }
    return rec;
}

ActivationRecord ActivationStore::get(const RecordKey& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) {
        throw MissingDataError("no record " + key.str() + " in store " + base_.string());
    }
    return read_at(key, it->second);
}

void ActivationStore::scan(const std::function<bool(const RecordKey&)>& filter,
                           const std::function<void(const ActivationRecord&)>& visit) const {
    for (const auto& [key, offset] : index_) {
        if (filter && !filter(key)) continue;
        visit(read_at(key, offset));
    }
}

std::vector<ActivationRecord> ActivationStore::scan(
    const std::function<bool(const RecordKey&)>& filter) const {
    std::vector<ActivationRecord> out;
    scan(filter, [&out](const ActivationRecord& r) { out.push_back(r); });
    return out;
}

void ActivationStore::flush() {
    if (!writable_ || !dirty_) return;
    nlohmann::json doc;
    doc["format"] = "driftprobe.actstore.v1";
    doc["backend_id"] = descriptor_.backend_id;
    doc["hidden_dim"] = descriptor_.hidden_dim;
    doc["n_layers"] = descriptor_.n_layers;
    doc["template_family"] = descriptor_.template_family;

    // Manifest rows in file order so offsets are strictly increasing.
    std::vector<std::pair<uint64_t, const RecordKey*>> by_offset;
    by_offset.reserve(index_.size());
    for (const auto& [key, offset] : index_) by_offset.emplace_back(offset, &key);
    std::sort(by_offset.begin(), by_offset.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    auto& records = doc["records"] = nlohmann::json::array();
    for (const auto& [offset, key] : by_offset) {
        records.push_back({{"context_id", key->context_id},
                           {"turn", key->turn},
                           {"item_id", key->item_id},
                           {"answer", key->answer},
                           {"layer", key->layer},
                           {"offset", offset}});
    }

    const auto mpath = manifest_path(base_);
    auto tmp = mpath;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) {
            throw StoreError("cannot write manifest " + tmp.string());
        }
        out << doc.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, mpath);
    dirty_ = false;
}

} // namespace driftprobe
