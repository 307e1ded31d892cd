#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftprobe/chat_template.hpp"
#include "driftprobe/conversation.hpp"
#include "driftprobe/qa_dataset.hpp"

namespace driftprobe {

struct BackendDescriptor {
    std::string backend_id;
    int n_layers = 0;
    int hidden_dim = 0;
    std::string template_family;
};

enum class CapturePosition { AnswerToken, PreAnswerToken };

const char* to_string(CapturePosition p);
CapturePosition capture_position_from_string(const std::string& s);

// What to read out of a forward pass. item_id / answer are key metadata that
// the backend echoes into the records it returns.
struct CaptureRequest {
    RenderedContext context;
    std::vector<int> layers;
    CapturePosition position = CapturePosition::AnswerToken;
    std::string item_id;
    std::optional<Answer> answer; // absent for pre-answer captures
};

// One residual-stream vector keyed by (context, turn, item, answer, layer).
struct ActivationRecord {
    std::string context_id;
    int turn = 0;
    std::string item_id;
    std::optional<Answer> answer;
    int layer = 0;
    std::vector<float> vector;
};

struct AnswerLogprobs {
    double lp_yes = 0.0;
    double lp_no = 0.0;
};

// Capture contract every model implementation satisfies. Implementations must
// be safe for concurrent read-only calls (the fixture and HTTP client are).
class Backend {
  public:
    virtual ~Backend() = default;

    virtual const BackendDescriptor& descriptor() const = 0;

    // One record per requested layer, deterministic for deterministic backends.
    virtual std::vector<ActivationRecord> capture(const CaptureRequest& request) = 0;

    // Log-probabilities of the rendered "Yes"/"No" answer words at the next
    // position; the context must end at the generation position (no answer).
    virtual AnswerLogprobs answer_logprobs(const RenderedContext& context) = 0;

    // Optional additive-intervention hook: alpha * direction is added to the
    // residual stream at (layer, pre-answer position) for this call only.
    virtual bool supports_steering() const { return false; }
    virtual AnswerLogprobs answer_logprobs_steered(const RenderedContext& context, int layer,
                                                   std::span<const float> direction, double alpha);
};

// Fraction of items whose forced-choice argmax answer equals factual_answer in
// the turn-t context of the script. Ties count as incorrect.
double behavioral_accuracy(Backend& backend, const QADataset& ds, const ConversationScript& script,
                           int turn, const TemplateRegistry& templates);

// Store/context-id convention: turn 0 of every script is the shared empty
// context.
std::string context_tag_for_turn(const ConversationScript& script, int turn);

} // namespace driftprobe
