#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace driftprobe {

enum class Answer { Yes, No };

Answer negate_answer(Answer a);
const char* to_string(Answer a);
Answer answer_from_string(const std::string& s);

// One yes/no question together with which answer is factual.
struct QAItem {
    std::string id;
    std::string question;
    Answer factual_answer = Answer::Yes;
    std::string topic;
    std::string set_name;
};

// An ordered question collection, balanced by factual-answer polarity
// (|#Yes - #No| <= 1) with unique ids.
struct QADataset {
    std::string name;
    std::vector<QAItem> items;

    size_t size() const { return items.size(); }
    size_t count(Answer a) const;
    const QAItem& item_by_id(const std::string& id) const;

    // Throws ValidationError on duplicate ids, empty questions, or imbalance.
    void validate() const;
};

struct DatasetSplit {
    QADataset train;
    QADataset holdout;
    uint64_t seed = 0;
    double holdout_fraction = 0.0;
};

// JSON Lines, one object per line with keys id, question, factual_answer,
// topic, set_name. Unknown keys are ignored.
QADataset load_qa_jsonl(const std::filesystem::path& path);

// Deterministic stratified split: holdout gets round(fraction * n) items and
// both sides stay balanced within +-1.
DatasetSplit split_dataset(const QADataset& ds, double holdout_fraction, uint64_t seed);

} // namespace driftprobe
