#pragma once

#include <string>
#include <vector>

#include "driftprobe/activation_store.hpp"
#include "driftprobe/backend.hpp"
#include "driftprobe/probe.hpp"

namespace driftprobe {

// Unit direction along which the residual stream is shifted at the pre-answer
// position.
struct SteeringVector {
    int layer = 0;
    std::vector<float> direction;
    std::string fitted_from;
};

// Logistic probe on pre-answer records predicting whether the model's emitted
// answer is "Yes"; the label for each (item, context) row is factual_answer,
// negated in contexts marked behavior_inverted. Returns normalized raw-space
// weights.
SteeringVector fit_behavior_probe(const QADataset& ds_train, const std::vector<TrainContext>& contexts,
                                  const ActivationStore& store, int layer, double lambda);

// Answer logprobs with alpha * direction added at (layer, pre-answer
// position); alpha = 0 reproduces the unsteered logprobs bit-for-bit.
AnswerLogprobs steer_and_answer(Backend& backend, const RenderedContext& context,
                                const SteeringVector& sv, double alpha);

struct SteeringOutcome {
    std::string context_tag;
    double alpha = 0.0;
    double yes_rate_before = 0.0;
    double yes_rate_after = 0.0;
    int n_questions = 0;
};

struct EvalContext {
    const ConversationScript* script = nullptr;
    int turn = 0;
};

// Yes-rate (fraction of strict-argmax "Yes" answers) before and after the
// intervention, per (context, alpha).
std::vector<SteeringOutcome> intervention_report(Backend& backend, const QADataset& ds,
                                                 const std::vector<EvalContext>& contexts,
                                                 const SteeringVector& sv,
                                                 const std::vector<double>& alphas,
                                                 const TemplateRegistry& templates);

} // namespace driftprobe
