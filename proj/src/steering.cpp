#include "driftprobe/steering.hpp"

#include <cmath>

#include "driftprobe/errors.hpp"
#include "driftprobe/logistic.hpp"

namespace driftprobe {

SteeringVector fit_behavior_probe(const QADataset& ds_train, const std::vector<TrainContext>& contexts,
                                  const ActivationStore& store, int layer, double lambda) {
    if (contexts.empty()) {
        throw ArgumentError("no contexts for the behavior probe");
    }
    LabeledFeatures features;
    features.layer = layer;
    std::vector<std::string> missing;
    for (const auto& ctx : contexts) {
        features.context_tags.push_back(ctx.label());
        for (const auto& item : ds_train.items) {
            const RecordKey key{ctx.tag, ctx.turn, item.id, "none", layer};
            if (!store.contains(key)) {
                if (missing.size() < 8) missing.push_back(key.str());
                continue;
            }
            const auto rec = store.get(key);
            features.rows.emplace_back(rec.vector.begin(), rec.vector.end());
            const Answer expected =
                ctx.behavior_inverted ? negate_answer(item.factual_answer) : item.factual_answer;
            features.labels.push_back(expected == Answer::Yes ? 1 : 0);
            features.item_ids.push_back(item.id);
            features.answers.push_back(expected);
            features.row_context_labels.push_back(ctx.label());
        }
    }
    if (!missing.empty()) {
        std::string msg = "missing pre-answer records: ";
        for (size_t i = 0; i < missing.size(); ++i) {
            if (i) msg += ", ";
            msg += missing[i];
        }
        msg += " (run `driftprobe extract` first)";
        throw MissingDataError(msg);
    }

    FitOptions options;
    options.lambda = lambda;
    const ProbeDirection probe = fit_probe(features, options);

    const auto raw = probe.unstandardized_weights();
    double norm = 0.0;
    for (double w : raw) norm += w * w;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) {
        throw ValidationError("behavior probe has zero weights; nothing to steer along");
    }

    SteeringVector sv;
    sv.layer = layer;
    sv.direction.resize(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        sv.direction[i] = static_cast<float>(raw[i] / norm);
    }
    sv.fitted_from = "behavior_probe";
    for (size_t i = 0; i < features.context_tags.size(); ++i) {
        sv.fitted_from += (i ? "," : ":") + features.context_tags[i];
    }
    return sv;
}

AnswerLogprobs steer_and_answer(Backend& backend, const RenderedContext& context,
                                const SteeringVector& sv, double alpha) {
    if (!backend.supports_steering()) {
        throw BackendError("backend \"" + backend.descriptor().backend_id +
                           "\" does not expose the steering hook");
    }
    return backend.answer_logprobs_steered(context, sv.layer,
                                           std::span<const float>(sv.direction), alpha);
}

std::vector<SteeringOutcome> intervention_report(Backend& backend, const QADataset& ds,
                                                 const std::vector<EvalContext>& contexts,
                                                 const SteeringVector& sv,
                                                 const std::vector<double>& alphas,
                                                 const TemplateRegistry& templates) {
    if (ds.items.empty()) {
        throw ArgumentError("empty dataset");
    }
    const ChatTemplate& tpl = templates.get(backend.descriptor().template_family);

    std::vector<SteeringOutcome> outcomes;
    for (const auto& ctx : contexts) {
        const auto prefix = prefix_at_turn(*ctx.script, ctx.turn);
        const std::string tag = context_tag_for_turn(*ctx.script, ctx.turn);

        std::vector<RenderedContext> rendered;
        rendered.reserve(ds.items.size());
        for (const auto& item : ds.items) {
            RenderedContext rc = render_context(tpl, prefix, item.question, std::nullopt, tag);
            rc.turn = ctx.turn;
            rendered.push_back(std::move(rc));
        }

        const auto yes_rate = [&](double alpha) {
            size_t yes = 0;
            for (const auto& rc : rendered) {
                const AnswerLogprobs lp = steer_and_answer(backend, rc, sv, alpha);
                if (lp.lp_yes > lp.lp_no) ++yes;
            }
            return static_cast<double>(yes) / static_cast<double>(rendered.size());
        };

        double before = 0.0;
        {
            size_t yes = 0;
            for (const auto& rc : rendered) {
                const AnswerLogprobs lp = backend.answer_logprobs(rc);
                if (lp.lp_yes > lp.lp_no) ++yes;
            }
            before = static_cast<double>(yes) / static_cast<double>(rendered.size());
        }
        for (double alpha : alphas) {
            SteeringOutcome outcome;
            outcome.context_tag = tag;
            outcome.alpha = alpha;
            outcome.yes_rate_before = before;
            outcome.yes_rate_after = yes_rate(alpha);
            outcome.n_questions = static_cast<int>(ds.items.size());
            outcomes.push_back(outcome);
        }
    }
    return outcomes;
}

} // namespace driftprobe
