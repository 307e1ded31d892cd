#include "driftprobe/qa_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "driftprobe/errors.hpp"
#include "driftprobe/rng.hpp"

namespace driftprobe {

Answer negate_answer(Answer a) {
    return a == Answer::Yes ? Answer::No : Answer::Yes;
}

const char* to_string(Answer a) {
    return a == Answer::Yes ? "Yes" : "No";
}

Answer answer_from_string(const std::string& s) {
    if (s == "Yes") return Answer::Yes;
    if (s == "No") return Answer::No;
    throw ValidationError("factual_answer must be exactly \"Yes\" or \"No\", got \"" + s + "\"");
}

static bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

size_t QADataset::count(Answer a) const {
    return static_cast<size_t>(
        std::count_if(items.begin(), items.end(),
                      [a](const QAItem& it) { return it.factual_answer == a; }));
}

const QAItem& QADataset::item_by_id(const std::string& id) const {
    for (const auto& it : items) {
        if (it.id == id) return it;
    }
    throw ArgumentError("dataset \"" + name + "\" has no item with id \"" + id + "\"");
}

void QADataset::validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& it : items) {
        if (!seen.insert(it.id).second) {
            throw ValidationError("dataset \"" + name + "\": duplicate item id \"" + it.id + "\"");
        }
        if (is_blank(it.question)) {
            throw ValidationError("dataset \"" + name + "\": item \"" + it.id + "\" has an empty question");
        }
    }
    const auto yes = count(Answer::Yes);
    const auto no = count(Answer::No);
    if (yes > no + 1 || no > yes + 1) {
        throw ValidationError("dataset \"" + name + "\": imbalance " + std::to_string(yes) +
                              " vs " + std::to_string(no));
    }
}

QADataset load_qa_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open dataset file " + path.string());
    }
    QADataset ds;
    ds.name = path.stem().string();

    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        QAItem item;
        try {
            item.id = obj.at("id").get<std::string>();
            item.question = obj.at("question").get<std::string>();
            item.factual_answer = answer_from_string(obj.at("factual_answer").get<std::string>());
            item.topic = obj.at("topic").get<std::string>();
            item.set_name = obj.at("set_name").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        ds.items.push_back(std::move(item));
    }
    ds.validate();
    return ds;
}

DatasetSplit split_dataset(const QADataset& ds, double holdout_fraction, uint64_t seed) {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
        throw ArgumentError("holdout_fraction must be in (0,1), got " + std::to_string(holdout_fraction));
    }
    if (ds.size() < 2) {
        throw ValidationError("dataset \"" + ds.name + "\" too small to split (" +
                              std::to_string(ds.size()) + " items)");
    }
    ds.validate();

    std::vector<size_t> yes_idx, no_idx;
    for (size_t i = 0; i < ds.items.size(); ++i) {
        (ds.items[i].factual_answer == Answer::Yes ? yes_idx : no_idx).push_back(i);
    }

    const size_t n = ds.size();
    const size_t holdout_n = static_cast<size_t>(std::llround(holdout_fraction * static_cast<double>(n)));

    // Stratified allocation: halve the holdout; an odd leftover goes to the
    // larger strata (ties to Yes) so both sides stay balanced within +-1.
    size_t h_yes = holdout_n / 2;
    size_t h_no = holdout_n / 2;
    if (holdout_n % 2 == 1) {
        (no_idx.size() > yes_idx.size() ? h_no : h_yes) += 1;
    }
    if (h_yes > yes_idx.size() || h_no > no_idx.size()) {
        throw ValidationError("dataset \"" + ds.name + "\" too small to stratify a holdout of " +
                              std::to_string(holdout_n));
    }

    Rng rng(hash_combine(seed, hash_str(ds.name)));
    deterministic_shuffle(yes_idx, rng);
    deterministic_shuffle(no_idx, rng);

    std::vector<bool> in_holdout(n, false);
    for (size_t i = 0; i < h_yes; ++i) in_holdout[yes_idx[i]] = true;
    for (size_t i = 0; i < h_no; ++i) in_holdout[no_idx[i]] = true;

    DatasetSplit split;
    split.seed = seed;
    split.holdout_fraction = holdout_fraction;
    split.train.name = ds.name + ".train";
    split.holdout.name = ds.name + ".holdout";
    for (size_t i = 0; i < n; ++i) {
        (in_holdout[i] ? split.holdout : split.train).items.push_back(ds.items[i]);
    }
    return split;
}

} // namespace driftprobe
