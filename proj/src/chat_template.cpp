#include "driftprobe/chat_template.hpp"

#include <fstream>

#include <json.hpp>

#include "driftprobe/errors.hpp"

namespace driftprobe {

TemplateRegistry TemplateRegistry::builtin() {
    TemplateRegistry reg;
    reg.add({"gemma", "<start_of_turn>", "\n", "<end_of_turn>\n",
             {{Role::User, "user"}, {Role::Model, "model"}}});
    reg.add({"qwen", "<|im_start|>", "\n", "<|im_end|>\n",
             {{Role::User, "user"}, {Role::Model, "assistant"}}});
    return reg;
}

TemplateRegistry TemplateRegistry::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open template registry " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    TemplateRegistry reg = builtin();
    try {
        for (const auto& [family, t] : doc.at("families").items()) {
            ChatTemplate tpl;
            tpl.family = family;
            tpl.turn_open_prefix = t.at("turn_open_prefix").get<std::string>();
            tpl.turn_open_suffix = t.at("turn_open_suffix").get<std::string>();
            tpl.turn_close = t.at("turn_close").get<std::string>();
            tpl.role_names[Role::User] = t.at("role_names").at("user").get<std::string>();
            tpl.role_names[Role::Model] = t.at("role_names").at("model").get<std::string>();
            reg.add(std::move(tpl));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return reg;
}

void TemplateRegistry::add(ChatTemplate tpl) {
    families_[tpl.family] = std::move(tpl);
}

const ChatTemplate& TemplateRegistry::get(const std::string& family) const {
    auto it = families_.find(family);
    if (it == families_.end()) {
        throw ConfigError("unknown template family \"" + family + "\"");
    }
    return it->second;
}

static void check_alternation(const std::vector<Ply>& prefix) {
    for (size_t i = 0; i < prefix.size(); ++i) {
        const Role expected = (i % 2 == 0) ? Role::User : Role::Model;
        if (prefix[i].role != expected) {
            throw ValidationError("prefix ply " + std::to_string(i) + " breaks user/model alternation");
        }
    }
}

RenderedContext render_context(const ChatTemplate& tpl, const std::vector<Ply>& prefix,
                               const std::string& question, std::optional<Answer> answer,
                               const std::string& context_id) {
    if (question.empty()) {
        throw ArgumentError("question must be non-empty");
    }
    check_alternation(prefix);
    if (!prefix.empty()) {
        const Ply& last = prefix.back();
        if (last.role == Role::Model && last.text.empty()) {
            throw ValidationError("prefix ends with an unclosed model ply (empty answer slot)");
        }
        if (last.role == Role::User) {
            throw ValidationError("prefix ends with a user ply; a question cannot follow it");
        }
    }

    RenderedContext ctx;
    ctx.context_id = context_id;
    ctx.turn = static_cast<int>((prefix.size() + 1) / 2);

    std::string& out = ctx.text;
    for (const auto& ply : prefix) {
        out += tpl.open_marker(ply.role);
        out += ply.text;
        out += tpl.turn_close;
    }
    out += tpl.open_marker(Role::User);
    out += question;
    out += tpl.turn_close;
    out += tpl.open_marker(Role::Model);
    if (answer) {
        const std::string word = to_string(*answer);
        ctx.answer_span = AnswerSpan{out.size(), out.size() + word.size()};
        out += word;
    }
    return ctx;
}

std::vector<Ply> parse_rendered(const ChatTemplate& tpl, const std::string& text) {
    std::vector<Ply> plies;
    size_t pos = 0;
    while (pos < text.size()) {
        if (text.compare(pos, tpl.turn_open_prefix.size(), tpl.turn_open_prefix) != 0) {
            throw ParseError("expected turn-open marker at offset " + std::to_string(pos));
        }
        pos += tpl.turn_open_prefix.size();
        Role role;
        const std::string& user_name = tpl.role_names.at(Role::User);
        const std::string& model_name = tpl.role_names.at(Role::Model);
        if (text.compare(pos, user_name.size(), user_name) == 0 &&
            text.compare(pos + user_name.size(), tpl.turn_open_suffix.size(), tpl.turn_open_suffix) == 0) {
            role = Role::User;
            pos += user_name.size();
        } else if (text.compare(pos, model_name.size(), model_name) == 0 &&
                   text.compare(pos + model_name.size(), tpl.turn_open_suffix.size(), tpl.turn_open_suffix) == 0) {
            role = Role::Model;
            pos += model_name.size();
        } else {
            throw ParseError("unknown role name at offset " + std::to_string(pos));
        }
        pos += tpl.turn_open_suffix.size();

        const size_t close = text.find(tpl.turn_close, pos);
        if (close == std::string::npos) {
            // Trailing unclosed ply: the open answer slot.
            plies.push_back({role, text.substr(pos)});
            return plies;
        }
        plies.push_back({role, text.substr(pos, close - pos)});
        pos = close + tpl.turn_close.size();
    }
    return plies;
}

} // namespace driftprobe
