#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "driftprobe/backend.hpp"

namespace driftprobe {

// Synthetic backend with planted linear structure, used as the desk-scale
// oracle. Per layer L it plants a unit truth direction d_truth(L) and a unit
// behavior direction d_beh(L); the answer-token activation is
//
//   topic_mean_scale * u_topic(L)
//     + y * s(L) * d_truth(L)
//     + c * behavior_scale * s(L) * d_beh(L)
//     + role_drift_scale * u_drift(tag, turn, L)
//     + context_shift[tag] * d_truth(L)
//     + noise_scale * eps
//
// with y = +1 iff the rendered answer is factual (sign inverted for
// flip_topic items once the flip is active), s(L) = 0 below
// decodable_from_layer and 1 otherwise, and c = +1 iff the rendered answer
// matches the answer the fixture would emit in that context. Pre-answer
// activations replace the y/c terms with beta * s(L) * d_beh, beta = +1 iff
// the emitted answer is "Yes". Everything is a pure function of the config
// seed and the rendered text, so identical requests give identical bits.
struct FixtureConfig {
    int hidden_dim = 64;
    int n_layers = 12;
    uint64_t truth_direction_seed = 1;
    double role_drift_scale = 0.0;
    double noise_scale = 0.0;
    std::string flip_topic;
    int flip_turn = 1;
    int decodable_from_layer = 0;

    // "from_turn": flipped for every turn >= flip_turn. "alternating": flips
    // at flip_turn, reverts the next turn, and so on (two-sided argument).
    std::string flip_mode = "from_turn";

    double topic_mean_scale = 1.0;
    double behavior_scale = 0.0;

    // Context tags in which the fixture emits the opposite of the factual
    // answer (the opposite-day regime).
    std::set<std::string> behavior_flip_contexts = {"opposite_day"};
    // Context tags in which the behavior direction itself is negated, giving
    // steering interventions the opposite effect there.
    std::set<std::string> behavior_direction_flip_contexts;
    // Additive shift along d_truth applied to every activation of a context.
    std::map<std::string, double> context_shift;

    int behavior_readout_layer = -1; // -1 = last layer
    double logit_scale = 4.0;
    size_t max_context_chars = 65536;

    // Datasets preloaded as the fixture's world knowledge.
    std::vector<std::filesystem::path> knowledge_paths;

    void validate() const;
    int readout_layer() const { return behavior_readout_layer < 0 ? n_layers - 1 : behavior_readout_layer; }
};

FixtureConfig fixture_config_from_json_file(const std::filesystem::path& path);

class FixtureBackend final : public Backend {
  public:
    FixtureBackend(FixtureConfig cfg, const TemplateRegistry& templates,
                   std::string template_family = "gemma");

    // Questions the fixture can answer; capture fails on unknown questions.
    void add_knowledge(const QADataset& ds);

    const BackendDescriptor& descriptor() const override { return descriptor_; }
    std::vector<ActivationRecord> capture(const CaptureRequest& request) override;
    AnswerLogprobs answer_logprobs(const RenderedContext& context) override;
    bool supports_steering() const override { return true; }
    AnswerLogprobs answer_logprobs_steered(const RenderedContext& context, int layer,
                                           std::span<const float> direction, double alpha) override;

    // Oracle accessors for tests and closed-form expectations.
    const FixtureConfig& config() const { return cfg_; }
    const std::vector<double>& truth_direction(int layer) const;
    const std::vector<double>& behavior_direction(int layer) const;
    bool truth_flip_active(const std::string& topic, int turn) const;
    Answer emitted_answer(const std::string& question, const std::string& context_tag, int turn) const;

  private:
    struct KnowledgeEntry {
        std::string item_id;
        Answer factual = Answer::Yes;
        std::string topic;
    };
    struct ParsedContext {
        std::string question;
        std::string answer_word;
        size_t pre_answer_len = 0; // text length up to the answer slot
    };

    ParsedContext parse_context(const RenderedContext& context) const;
    const KnowledgeEntry& lookup(const std::string& question) const;
    std::vector<double> unit_vector(const char* salt, const std::string& key, int layer) const;
    std::vector<double> make_activation(const RenderedContext& context, const ParsedContext& parsed,
                                        int layer, CapturePosition position) const;
    AnswerLogprobs logprobs_impl(const RenderedContext& context, double steer_add) const;

    FixtureConfig cfg_;
    BackendDescriptor descriptor_;
    ChatTemplate tpl_;
    std::map<std::string, KnowledgeEntry> knowledge_; // question -> entry
    std::vector<std::vector<double>> d_truth_;        // per layer, unit
    std::vector<std::vector<double>> d_beh_;          // per layer, unit
};

std::unique_ptr<FixtureBackend> make_fixture(const FixtureConfig& cfg,
                                             const TemplateRegistry& templates,
                                             const std::string& template_family = "gemma");

} // namespace driftprobe
