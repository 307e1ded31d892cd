#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftprobe/activation_store.hpp"
#include "driftprobe/conversation.hpp"
#include "driftprobe/qa_dataset.hpp"

namespace driftprobe {

// Train-feature standardization, stored inside the probe so scoring is
// self-contained. Scalar mode (the default) centers per feature but divides by
// one shared scale, preserving the geometry of the fitted direction.
struct Standardization {
    enum class Mode { Scalar, PerFeature };

    Mode mode = Mode::Scalar;
    std::vector<double> mean;
    std::vector<double> scale; // strictly positive

    std::vector<double> apply(std::span<const float> v) const;
    std::vector<double> apply(const std::vector<double>& v) const;
};

Standardization::Mode standardization_mode_from_string(const std::string& s);
const char* to_string(Standardization::Mode m);

Standardization compute_standardization(const std::vector<std::vector<double>>& rows,
                                        Standardization::Mode mode);

// A fitted linear concept direction: phi(q, a) = w . standardize(h) + b.
struct ProbeDirection {
    int layer = 0;
    std::vector<double> weights; // on standardized features
    double bias = 0.0;
    double lambda = 1.0;
    Standardization standardization;
    std::vector<std::string> train_context_tags;
    std::map<std::string, double> holdout_metrics;

    double score(std::span<const float> vec) const;
    double score(const std::vector<double>& vec) const;

    // The direction in raw activation space (weights / scale), the thing to
    // compare against a planted axis.
    std::vector<double> unstandardized_weights() const;
};

double probe_score(const ProbeDirection& probe, const ActivationRecord& record);

// A (script, turn) cell of the training protocol. "empty" at turn 0 is the
// canonical empty context. behavior_inverted marks contexts that make the
// model answer opposite to the facts; only behavior probes consume it.
struct TrainContext {
    std::string tag;
    int turn = 0;
    bool behavior_inverted = false;

    std::string label() const {
        return turn == 0 ? tag : tag + "@" + std::to_string(turn);
    }
};

struct LabeledFeatures {
    int layer = 0;
    std::vector<std::vector<double>> rows;
    std::vector<int> labels; // 1 = the completion is factual
    std::vector<std::string> item_ids;
    std::vector<Answer> answers;
    std::vector<std::string> row_context_labels;
    std::vector<std::string> context_tags; // distinct labels, in request order
};

// One row per (item, answer, context) from answer-token records; label 1 iff
// the rendered answer equals factual_answer.
LabeledFeatures assemble_training_set(const QADataset& ds, const std::vector<TrainContext>& contexts,
                                      const ActivationStore& store, int layer);

struct FitOptions {
    double lambda = 1.0;
    Standardization::Mode std_mode = Standardization::Mode::Scalar;
    double grad_tol = 1e-8;
};

ProbeDirection fit_probe(const LabeledFeatures& features, const FitOptions& options = {});

// Fraction of rows with (score > 0) == factual; 0.5 is chance on balanced data.
double probe_accuracy(const ProbeDirection& probe, const LabeledFeatures& features);

struct MarginPoint {
    int turn = 0;
    std::vector<std::pair<std::string, double>> per_question_margins;
    double mean_margin = 0.0;
    double margin_sum = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double ci_level = 0.95;
    int resamples = 0;
};

// m_i = phi(q_i, factual) - phi(q_i, nonfactual); the CI is a percentile
// bootstrap over question resamples.
MarginPoint margin_at_turn(const ProbeDirection& probe, const QADataset& ds,
                           const ConversationScript& script, int turn, const ActivationStore& store,
                           int resamples, uint64_t seed);

// Margin curve per dataset over turns 0..script.turn_count().
std::map<std::string, std::vector<MarginPoint>> turn_series(
    const ProbeDirection& probe, const std::vector<const QADataset*>& datasets,
    const ConversationScript& script, const ActivationStore& store, int resamples, uint64_t seed);

struct AnswerwiseScore {
    std::string item_id;
    double phi_factual = 0.0;
    double phi_nonfactual = 0.0;
};

std::vector<AnswerwiseScore> answerwise_scores(const ProbeDirection& probe, const QADataset& ds,
                                               const ConversationScript& script, int turn,
                                               const ActivationStore& store);

struct LayerSweepResult {
    std::map<int, std::map<std::string, double>> per_layer; // layer -> context label -> accuracy
    int selected_layer = 0;
    std::vector<std::string> selection_contexts;
};

struct SweepSpec {
    std::vector<TrainContext> train_contexts;
    std::vector<TrainContext> eval_contexts;
};

// Fits one probe per layer on the train contexts and selects the layer with
// the best mean holdout accuracy over the eval contexts (ties: lowest layer).
LayerSweepResult layer_sweep(const QADataset& train, const QADataset& holdout,
                             const SweepSpec& spec, const ActivationStore& store,
                             const FitOptions& options = {});

// Serialization: `<base>.json` plus the weight vector as a one-record
// activation-store sidecar (`<base>.actbin` / `<base>.manifest.json`).
void save_probe(const ProbeDirection& probe, const std::filesystem::path& base);
ProbeDirection load_probe(const std::filesystem::path& base);

} // namespace driftprobe
