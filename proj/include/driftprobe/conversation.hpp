#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace driftprobe {

enum class Role { User, Model };

const char* to_string(Role r);
Role role_from_string(const std::string& s);

// Half a conversation turn: one message by one party.
struct Ply {
    Role role = Role::User;
    std::string text;

    bool operator==(const Ply&) const = default;
};

// A scripted conversation. Roles strictly alternate starting with the user;
// a turn is a user+model pair and turn 0 is the empty context.
struct ConversationScript {
    std::string name;
    std::vector<Ply> plies;

    int turn_count() const { return static_cast<int>((plies.size() + 1) / 2); }
    void validate() const;

    bool operator==(const ConversationScript&) const = default;
};

// First min(2t, |plies|) plies; t = 0 gives the empty prefix.
std::vector<Ply> prefix_at_turn(const ConversationScript& script, int t);

// The fixed 3-turn opposite-day prompt: instruction + acknowledgement, then
// two example exchanges answered with inverted facts.
ConversationScript builtin_opposite_day();

// Replaces every "{{MODEL_NAME}}" placeholder in ply texts.
ConversationScript substitute_model_name(ConversationScript script, const std::string& name);

ConversationScript load_script_json(const std::filesystem::path& path);
void save_script_json(const ConversationScript& script, const std::filesystem::path& path);

} // namespace driftprobe
