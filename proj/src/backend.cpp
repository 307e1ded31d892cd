#include "driftprobe/backend.hpp"

#include "driftprobe/errors.hpp"

namespace driftprobe {

const char* to_string(CapturePosition p) {
    return p == CapturePosition::AnswerToken ? "answer_token" : "pre_answer_token";
}

CapturePosition capture_position_from_string(const std::string& s) {
    if (s == "answer_token") return CapturePosition::AnswerToken;
    if (s == "pre_answer_token") return CapturePosition::PreAnswerToken;
    throw ValidationError("unknown capture position \"" + s + "\"");
}

AnswerLogprobs Backend::answer_logprobs_steered(const RenderedContext&, int,
                                                std::span<const float>, double) {
    throw BackendError("backend \"" + descriptor().backend_id + "\" has no steering hook");
}

std::string context_tag_for_turn(const ConversationScript& script, int turn) {
    return turn == 0 ? "empty" : script.name;
}

double behavioral_accuracy(Backend& backend, const QADataset& ds, const ConversationScript& script,
                           int turn, const TemplateRegistry& templates) {
    if (ds.items.empty()) {
        throw ArgumentError("empty dataset");
    }
    const ChatTemplate& tpl = templates.get(backend.descriptor().template_family);
    const auto prefix = prefix_at_turn(script, turn);
    const std::string tag = context_tag_for_turn(script, turn);

    size_t correct = 0;
    for (const auto& item : ds.items) {
        RenderedContext ctx = render_context(tpl, prefix, item.question, std::nullopt, tag);
        ctx.turn = turn;
        const AnswerLogprobs lp = backend.answer_logprobs(ctx);
        // Strict argmax; ties lose.
        const bool says_yes = lp.lp_yes > lp.lp_no;
        const bool says_no = lp.lp_no > lp.lp_yes;
        if ((item.factual_answer == Answer::Yes && says_yes) ||
            (item.factual_answer == Answer::No && says_no)) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.items.size());
}

} // namespace driftprobe
