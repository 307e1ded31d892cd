#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "driftprobe/conversation.hpp"
#include "driftprobe/qa_dataset.hpp"

namespace driftprobe {

// Marker scheme of one model family. A ply renders as
//   turn_open_prefix + role_name + turn_open_suffix + text + turn_close
// so that stripping the markers recovers the ply texts exactly.
struct ChatTemplate {
    std::string family;
    std::string turn_open_prefix;
    std::string turn_open_suffix;
    std::string turn_close;
    std::map<Role, std::string> role_names;

    std::string open_marker(Role r) const {
        return turn_open_prefix + role_names.at(r) + turn_open_suffix;
    }
};

struct AnswerSpan {
    size_t begin = 0;
    size_t end = 0; // half-open

    bool operator==(const AnswerSpan&) const = default;
};

// A fully rendered prompt: script prefix + probe question + (optionally) a
// candidate answer word at the very end.
struct RenderedContext {
    std::string text;
    std::optional<AnswerSpan> answer_span;
    std::string context_id;
    int turn = 0;

    std::string answer_word() const {
        if (!answer_span) return {};
        return text.substr(answer_span->begin, answer_span->end - answer_span->begin);
    }
};

class TemplateRegistry {
  public:
    // Ships with "gemma" and "qwen"; a registry file can add or override
    // families without code changes.
    static TemplateRegistry builtin();
    static TemplateRegistry load(const std::filesystem::path& path);

    const ChatTemplate& get(const std::string& family) const;
    void add(ChatTemplate tpl);

  private:
    std::map<std::string, ChatTemplate> families_;
};

// Renders prefix + question as a user ply + an opened model ply. With an
// answer, the answer word ends the text and answer_span covers it; without,
// the text ends exactly at the model turn-open marker (generation position).
RenderedContext render_context(const ChatTemplate& tpl, const std::vector<Ply>& prefix,
                               const std::string& question, std::optional<Answer> answer,
                               const std::string& context_id = "empty");

// Inverse of rendering: recovers the ply sequence (a trailing unclosed model
// ply becomes a final Ply with whatever text follows its open marker).
std::vector<Ply> parse_rendered(const ChatTemplate& tpl, const std::string& text);

} // namespace driftprobe
