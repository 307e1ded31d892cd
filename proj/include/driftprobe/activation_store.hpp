#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <fstream>
#include <string>
#include <vector>

#include "driftprobe/backend.hpp"

namespace driftprobe {

// Identity of one stored vector. Keys order lexicographically by
// (context_id, turn, item_id, answer, layer) with the answer in its canonical
// string form ("No" < "Yes" < "none").
struct RecordKey {
    std::string context_id;
    int turn = 0;
    std::string item_id;
    std::string answer = "none";
    int layer = 0;

    static RecordKey of(const ActivationRecord& rec);
    std::string str() const;

    friend bool operator<(const RecordKey& a, const RecordKey& b) {
        return std::tie(a.context_id, a.turn, a.item_id, a.answer, a.layer) <
               std::tie(b.context_id, b.turn, b.item_id, b.answer, b.layer);
    }
    friend bool operator==(const RecordKey& a, const RecordKey& b) {
        return std::tie(a.context_id, a.turn, a.item_id, a.answer, a.layer) ==
               std::tie(b.context_id, b.turn, b.item_id, b.answer, b.layer);
    }
};

// Persistent activation cache: `<base>.actbin` holds little-endian float32
// rows, `<base>.manifest.json` the byte-offset index. One writer or many
// readers, never both; a `<base>.lock` file enforces the exclusion. Duplicate
// puts append a fresh row and repoint the index (last write wins); the
// manifest is committed atomically via write-temp-then-rename.
class ActivationStore {
  public:
    static ActivationStore open_for_write(const std::filesystem::path& base,
                                          const BackendDescriptor& descriptor);
    static ActivationStore open_for_read(const std::filesystem::path& base);

    ActivationStore(ActivationStore&&) noexcept;
    ActivationStore& operator=(ActivationStore&&) = delete;
    ~ActivationStore();

    const BackendDescriptor& descriptor() const { return descriptor_; }
    size_t size() const { return index_.size(); }

    std::string put(const ActivationRecord& record);
    bool contains(const RecordKey& key) const { return index_.count(key) > 0; }
    ActivationRecord get(const RecordKey& key) const;

    // Visits matching records in key order; a null filter matches everything.
    void scan(const std::function<bool(const RecordKey&)>& filter,
              const std::function<void(const ActivationRecord&)>& visit) const;
    std::vector<ActivationRecord> scan(const std::function<bool(const RecordKey&)>& filter) const;

    void flush();

  private:
    ActivationStore() = default;
    ActivationRecord read_at(const RecordKey& key, uint64_t offset) const;
    void load_manifest(const std::filesystem::path& manifest_path);

    std::filesystem::path base_;
    BackendDescriptor descriptor_;
    bool writable_ = false;
    bool dirty_ = false;
    bool locked_ = false;
    std::map<RecordKey, uint64_t> index_; // key -> byte offset
    uint64_t end_offset_ = 0;
    mutable std::ofstream out_;
    mutable std::ifstream in_;
    mutable std::mutex io_mutex_;
};

} // namespace driftprobe
