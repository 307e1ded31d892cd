#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "driftprobe/activation_store.hpp"
#include "driftprobe/qa_dataset.hpp"

namespace driftprobe {

// The two answer-token activations of one question, same layer.
struct ContrastPair {
    std::string item_id;
    std::vector<float> x_yes;
    std::vector<float> x_no;
};

// Per answer group: mean vector and one scalar scale (the mean feature
// standard deviation of the group), so normalization preserves direction
// geometry while removing the constant answer-token offset.
struct GroupNorms {
    std::vector<double> mean_yes;
    std::vector<double> mean_no;
    double scale_yes = 1.0;
    double scale_no = 1.0;
};

struct NormalizedPair {
    std::string item_id;
    std::vector<double> x_yes;
    std::vector<double> x_no;
};

struct NormalizedPairs {
    std::vector<NormalizedPair> pairs;
    GroupNorms norms;
};

NormalizedPairs normalize_pairs(const std::vector<ContrastPair>& pairs);

// Consistency + confidence objective: (p_yes - (1 - p_no))^2 + min(p_yes, p_no)^2.
double ccs_loss(double p_yes, double p_no);

struct CCSProbe {
    std::vector<double> weights;
    double bias = 0.0;
    GroupNorms group_norms;
    uint64_t run_seed = 0;
    double train_loss = 0.0;
    double holdout_accuracy = 0.0;
    int sign = 1;
};

struct CcsOptions {
    int steps = 1000;
    double learning_rate = 1e-3;
};

// A labeled pair for sign calibration and accuracy measurement.
struct LabeledPair {
    ContrastPair pair;
    bool yes_is_factual = false;
};

// Gradient-based minimization (Adam, fixed budget) over `restarts` random
// initializations; keeps the lowest-loss restart and orients the sign so
// calibration accuracy is >= 0.5.
CCSProbe train_ccs(const std::vector<ContrastPair>& pairs, const std::vector<LabeledPair>& calibration,
                   int restarts, uint64_t seed, const CcsOptions& options = {});

// Probability that the "Yes" completion is true, averaged over the two views.
double ccs_predict_yes_true(const CCSProbe& probe, const NormalizedPair& pair);

// Accuracy of a probe on labeled pairs normalized with their own group norms.
double ccs_accuracy(const CCSProbe& probe, const std::vector<LabeledPair>& pairs);

struct CcsCondition {
    const QADataset* dataset = nullptr;
    std::string context_tag;
    int turn = 0;

    std::string label() const {
        return dataset->name + "/" + (turn == 0 ? "empty" : context_tag + "@" + std::to_string(turn));
    }
};

struct CcsCampaignReport {
    int n_runs = 0;
    int kept_runs = 0;
    double filter_threshold = 0.0;
    bool no_runs_passed = false;
    std::vector<double> filter_accuracies;                  // per run, pre-filter
    std::map<std::string, std::vector<double>> accuracies;  // condition label -> kept-run accuracies
    std::map<std::string, double> mean_accuracy;            // condition label -> mean over kept runs
};

// Repeated CCS runs with distinct seeds; runs are kept when their holdout
// accuracy on generic questions in the empty context reaches the threshold.
CcsCampaignReport ccs_campaign(int layer, const QADataset& ds_train, const QADataset& ds_holdout,
                               const std::vector<CcsCondition>& conditions,
                               const ActivationStore& store, int n_runs, double filter_threshold,
                               uint64_t seed, const CcsOptions& options = {});

// Answer-token contrast pairs for a dataset in one (context, turn) cell.
std::vector<ContrastPair> pairs_from_store(const QADataset& ds, const std::string& context_tag,
                                           int turn, int layer, const ActivationStore& store);
std::vector<LabeledPair> labeled_pairs_from_store(const QADataset& ds, const std::string& context_tag,
                                                  int turn, int layer, const ActivationStore& store);

} // namespace driftprobe
