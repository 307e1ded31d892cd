#include "driftprobe/fixture_backend.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "driftprobe/errors.hpp"
#include "driftprobe/rng.hpp"

namespace driftprobe {

void FixtureConfig::validate() const {
    if (hidden_dim < 1) throw ValidationError("fixture hidden_dim must be >= 1");
    if (n_layers < 1) throw ValidationError("fixture n_layers must be >= 1");
    if (decodable_from_layer < 0 || decodable_from_layer >= n_layers) {
        throw ValidationError("decodable_from_layer must lie in [0, n_layers)");
    }
    if (noise_scale < 0.0 || role_drift_scale < 0.0 || behavior_scale < 0.0) {
        throw ValidationError("fixture scales must be >= 0");
    }
    if (flip_mode != "from_turn" && flip_mode != "alternating") {
        throw ValidationError("flip_mode must be \"from_turn\" or \"alternating\"");
    }
    if (readout_layer() < 0 || readout_layer() >= n_layers) {
        throw ValidationError("behavior_readout_layer out of range");
    }
}

FixtureConfig fixture_config_from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open fixture config " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    FixtureConfig cfg;
    try {
        cfg.hidden_dim = doc.value("hidden_dim", cfg.hidden_dim);
        cfg.n_layers = doc.value("n_layers", cfg.n_layers);
        cfg.truth_direction_seed = doc.value("truth_direction_seed", cfg.truth_direction_seed);
        cfg.role_drift_scale = doc.value("role_drift_scale", cfg.role_drift_scale);
        cfg.noise_scale = doc.value("noise_scale", cfg.noise_scale);
        cfg.flip_topic = doc.value("flip_topic", cfg.flip_topic);
        cfg.flip_turn = doc.value("flip_turn", cfg.flip_turn);
        cfg.decodable_from_layer = doc.value("decodable_from_layer", cfg.decodable_from_layer);
        cfg.flip_mode = doc.value("flip_mode", cfg.flip_mode);
        cfg.topic_mean_scale = doc.value("topic_mean_scale", cfg.topic_mean_scale);
        cfg.behavior_scale = doc.value("behavior_scale", cfg.behavior_scale);
        cfg.behavior_readout_layer = doc.value("behavior_readout_layer", cfg.behavior_readout_layer);
        cfg.logit_scale = doc.value("logit_scale", cfg.logit_scale);
        cfg.max_context_chars = doc.value("max_context_chars", cfg.max_context_chars);
        if (doc.contains("behavior_flip_contexts")) {
            cfg.behavior_flip_contexts.clear();
            for (const auto& t : doc.at("behavior_flip_contexts")) {
                cfg.behavior_flip_contexts.insert(t.get<std::string>());
            }
        }
        if (doc.contains("behavior_direction_flip_contexts")) {
            for (const auto& t : doc.at("behavior_direction_flip_contexts")) {
                cfg.behavior_direction_flip_contexts.insert(t.get<std::string>());
            }
        }
        if (doc.contains("context_shift")) {
            for (const auto& [tag, v] : doc.at("context_shift").items()) {
                cfg.context_shift[tag] = v.get<double>();
            }
        }
        if (doc.contains("knowledge_datasets")) {
            for (const auto& p : doc.at("knowledge_datasets")) {
                cfg.knowledge_paths.push_back(path.parent_path() / p.get<std::string>());
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    cfg.validate();
    return cfg;
}

static std::vector<double> seeded_gaussians(uint64_t seed, size_t n) {
    Rng rng(seed);
    return gaussian_vector(n, rng);
}

static void normalize(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
}

FixtureBackend::FixtureBackend(FixtureConfig cfg, const TemplateRegistry& templates,
                               std::string template_family)
    : cfg_(std::move(cfg)), tpl_(templates.get(template_family)) {
    cfg_.validate();
    descriptor_.backend_id = "fixture-" + std::to_string(cfg_.truth_direction_seed);
    descriptor_.n_layers = cfg_.n_layers;
    descriptor_.hidden_dim = cfg_.hidden_dim;
    descriptor_.template_family = template_family;

    const size_t dim = static_cast<size_t>(cfg_.hidden_dim);
    d_truth_.reserve(cfg_.n_layers);
    d_beh_.reserve(cfg_.n_layers);
    for (int layer = 0; layer < cfg_.n_layers; ++layer) {
        auto dt = seeded_gaussians(
            hash_combine(cfg_.truth_direction_seed, hash_combine(hash_str("truth"), layer)), dim);
        normalize(dt);
        auto db = seeded_gaussians(
            hash_combine(cfg_.truth_direction_seed, hash_combine(hash_str("beh"), layer)), dim);
        // Orthogonalize against d_truth so the two planted axes don't mix.
        double d = 0.0;
        for (size_t i = 0; i < dim; ++i) d += db[i] * dt[i];
        for (size_t i = 0; i < dim; ++i) db[i] -= d * dt[i];
        normalize(db);
        d_truth_.push_back(std::move(dt));
        d_beh_.push_back(std::move(db));
    }

    for (const auto& p : cfg_.knowledge_paths) {
        add_knowledge(load_qa_jsonl(p));
    }
}

void FixtureBackend::add_knowledge(const QADataset& ds) {
    for (const auto& item : ds.items) {
        auto [it, inserted] = knowledge_.try_emplace(item.question,
                                                     KnowledgeEntry{item.id, item.factual_answer, item.topic});
        if (!inserted && (it->second.factual != item.factual_answer || it->second.topic != item.topic)) {
            throw ValidationError("fixture knowledge conflict for question \"" + item.question + "\"");
        }
    }
}

const std::vector<double>& FixtureBackend::truth_direction(int layer) const {
    if (layer < 0 || layer >= cfg_.n_layers) throw ArgumentError("layer out of range");
    return d_truth_[static_cast<size_t>(layer)];
}

const std::vector<double>& FixtureBackend::behavior_direction(int layer) const {
    if (layer < 0 || layer >= cfg_.n_layers) throw ArgumentError("layer out of range");
    return d_beh_[static_cast<size_t>(layer)];
}

bool FixtureBackend::truth_flip_active(const std::string& topic, int turn) const {
    if (topic != cfg_.flip_topic || cfg_.flip_topic.empty()) return false;
    if (turn < cfg_.flip_turn) return false;
    if (cfg_.flip_mode == "alternating") return (turn - cfg_.flip_turn) % 2 == 0;
    return true;
}

const FixtureBackend::KnowledgeEntry& FixtureBackend::lookup(const std::string& question) const {
    auto it = knowledge_.find(question);
    if (it == knowledge_.end()) {
        throw BackendError("fixture has no knowledge of question \"" + question + "\"");
    }
    return it->second;
}

Answer FixtureBackend::emitted_answer(const std::string& question, const std::string& context_tag,
                                      int turn) const {
    const KnowledgeEntry& k = lookup(question);
    Answer a = k.factual;
    if (truth_flip_active(k.topic, turn)) a = negate_answer(a);
    if (turn >= 1 && cfg_.behavior_flip_contexts.count(context_tag)) a = negate_answer(a);
    return a;
}

FixtureBackend::ParsedContext FixtureBackend::parse_context(const RenderedContext& context) const {
    if (context.text.size() > cfg_.max_context_chars) {
        throw BackendError("context of " + std::to_string(context.text.size()) +
                           " chars exceeds fixture limit of " + std::to_string(cfg_.max_context_chars));
    }
    const auto plies = parse_rendered(tpl_, context.text);
    if (plies.size() < 2 || plies[plies.size() - 2].role != Role::User ||
        plies.back().role != Role::Model) {
        throw BackendError("context does not end with a question and an answer slot");
    }
    ParsedContext parsed;
    parsed.question = plies[plies.size() - 2].text;
    parsed.answer_word = plies.back().text;
    parsed.pre_answer_len =
        context.answer_span ? context.answer_span->begin : context.text.size();
    return parsed;
}

std::vector<double> FixtureBackend::unit_vector(const char* salt, const std::string& key,
                                                int layer) const {
    auto v = seeded_gaussians(hash_combine(cfg_.truth_direction_seed,
                                           hash_combine(hash_str(salt),
                                                        hash_combine(hash_str(key), layer))),
                              static_cast<size_t>(cfg_.hidden_dim));
    normalize(v);
    return v;
}

std::vector<double> FixtureBackend::make_activation(const RenderedContext& context,
                                                    const ParsedContext& parsed, int layer,
                                                    CapturePosition position) const {
    const size_t dim = static_cast<size_t>(cfg_.hidden_dim);
    const KnowledgeEntry& k = lookup(parsed.question);
    const std::string& tag = context.context_id;
    const int turn = context.turn;
    const double gate = layer >= cfg_.decodable_from_layer ? 1.0 : 0.0;

    std::vector<double> act(dim, 0.0);

    if (cfg_.topic_mean_scale != 0.0) {
        const auto mu = unit_vector("topic", k.topic, layer);
        for (size_t i = 0; i < dim; ++i) act[i] += cfg_.topic_mean_scale * mu[i];
    }
    if (cfg_.role_drift_scale != 0.0 && turn > 0) {
        const auto dr = unit_vector("drift", tag + "#" + std::to_string(turn), layer);
        for (size_t i = 0; i < dim; ++i) act[i] += cfg_.role_drift_scale * dr[i];
    }
    if (auto it = cfg_.context_shift.find(tag); it != cfg_.context_shift.end()) {
        const auto& dt = d_truth_[static_cast<size_t>(layer)];
        for (size_t i = 0; i < dim; ++i) act[i] += it->second * dt[i];
    }

    const bool beh_dir_flipped = cfg_.behavior_direction_flip_contexts.count(tag) > 0;
    const auto& db = d_beh_[static_cast<size_t>(layer)];
    const double beh_dir_sign = beh_dir_flipped ? -1.0 : 1.0;

    if (position == CapturePosition::AnswerToken) {
        const Answer rendered = answer_from_string(parsed.answer_word);
        double y = rendered == k.factual ? 1.0 : -1.0;
        if (truth_flip_active(k.topic, turn)) y = -y;
        const auto& dt = d_truth_[static_cast<size_t>(layer)];
        for (size_t i = 0; i < dim; ++i) act[i] += y * gate * dt[i];

        if (cfg_.behavior_scale != 0.0) {
            const Answer emitted = emitted_answer(parsed.question, tag, turn);
            const double c = rendered == emitted ? 1.0 : -1.0;
            for (size_t i = 0; i < dim; ++i) {
                act[i] += c * cfg_.behavior_scale * gate * beh_dir_sign * db[i];
            }
        }
    } else {
        const Answer emitted = emitted_answer(parsed.question, tag, turn);
        const double beta = emitted == Answer::Yes ? 1.0 : -1.0;
        for (size_t i = 0; i < dim; ++i) act[i] += beta * gate * beh_dir_sign * db[i];
    }

    if (cfg_.noise_scale != 0.0) {
        // Keyed off the text itself so identical requests are bit-identical.
        const std::string_view text_key(context.text.data(),
                                        position == CapturePosition::PreAnswerToken
                                            ? parsed.pre_answer_len
                                            : context.text.size());
        Rng rng(hash_combine(cfg_.truth_direction_seed,
                             hash_combine(hash_str(position == CapturePosition::PreAnswerToken
                                                       ? "noise_pre"
                                                       : "noise_ans"),
                                          hash_combine(hash_str(text_key), layer))));
        for (size_t i = 0; i < dim; ++i) act[i] += cfg_.noise_scale * rng.next_gaussian();
    }
    return act;
}

std::vector<ActivationRecord> FixtureBackend::capture(const CaptureRequest& request) {
    if (request.layers.empty()) {
        throw ArgumentError("capture request names no layers");
    }
    for (int layer : request.layers) {
        if (layer < 0 || layer >= cfg_.n_layers) {
            throw ArgumentError("layer " + std::to_string(layer) + " out of range [0, " +
                                std::to_string(cfg_.n_layers) + ")");
        }
    }
    if (request.position == CapturePosition::AnswerToken && !request.context.answer_span) {
        throw ArgumentError("answer_token capture requires a context with an answer span");
    }

    const ParsedContext parsed = parse_context(request.context);
    std::vector<ActivationRecord> records;
    records.reserve(request.layers.size());
    for (int layer : request.layers) {
        const auto act = make_activation(request.context, parsed, layer, request.position);
        ActivationRecord rec;
        rec.context_id = request.context.context_id;
        rec.turn = request.context.turn;
        rec.item_id = request.item_id.empty() ? lookup(parsed.question).item_id : request.item_id;
        rec.answer = request.position == CapturePosition::AnswerToken
                         ? std::optional<Answer>(answer_from_string(parsed.answer_word))
                         : std::nullopt;
        rec.layer = layer;
        rec.vector.assign(act.begin(), act.end());
        records.push_back(std::move(rec));
    }
    return records;
}

AnswerLogprobs FixtureBackend::logprobs_impl(const RenderedContext& context,
                                             double steer_add) const {
    if (context.answer_span) {
        throw ArgumentError("answer_logprobs requires a context ending at the generation position");
    }
    const ParsedContext parsed = parse_context(context);
    const int readout = cfg_.readout_layer();
    const auto act = make_activation(context, parsed, readout, CapturePosition::PreAnswerToken);

    const bool beh_dir_flipped = cfg_.behavior_direction_flip_contexts.count(context.context_id) > 0;
    const auto& db = d_beh_[static_cast<size_t>(readout)];
    double proj = 0.0;
    for (size_t i = 0; i < act.size(); ++i) proj += act[i] * db[i];
    if (beh_dir_flipped) proj = -proj;

    const double z = cfg_.logit_scale * (proj + steer_add);
    // Two-way softmax over the answer words: lp_yes = log sigmoid(z).
    AnswerLogprobs lp;
    lp.lp_yes = -std::log1p(std::exp(-z));
    lp.lp_no = -std::log1p(std::exp(z));
    return lp;
}

AnswerLogprobs FixtureBackend::answer_logprobs(const RenderedContext& context) {
    return logprobs_impl(context, 0.0);
}

AnswerLogprobs FixtureBackend::answer_logprobs_steered(const RenderedContext& context, int layer,
                                                       std::span<const float> direction,
                                                       double alpha) {
    if (layer < 0 || layer >= cfg_.n_layers) {
        throw ArgumentError("steering layer out of range");
    }
    if (direction.size() != static_cast<size_t>(cfg_.hidden_dim)) {
        throw ArgumentError("steering direction has dimension " + std::to_string(direction.size()) +
                            ", expected " + std::to_string(cfg_.hidden_dim));
    }
    const int readout = cfg_.readout_layer();
    double add = 0.0;
    if (layer <= readout) {
        // The residual stream accumulates, so an addition at `layer` is still
        // present at the readout layer.
        const bool flipped = cfg_.behavior_direction_flip_contexts.count(context.context_id) > 0;
        const auto& db = d_beh_[static_cast<size_t>(readout)];
        double d = 0.0;
        for (size_t i = 0; i < direction.size(); ++i) d += static_cast<double>(direction[i]) * db[i];
        if (flipped) d = -d;
        add = alpha * d;
    }
    return logprobs_impl(context, add);
}

std::unique_ptr<FixtureBackend> make_fixture(const FixtureConfig& cfg,
                                             const TemplateRegistry& templates,
                                             const std::string& template_family) {
    return std::make_unique<FixtureBackend>(cfg, templates, template_family);
}

} // namespace driftprobe
