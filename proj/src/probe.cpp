#include "driftprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "driftprobe/errors.hpp"
#include "driftprobe/logistic.hpp"
#include "driftprobe/rng.hpp"

namespace driftprobe {

Standardization::Mode standardization_mode_from_string(const std::string& s) {
    if (s == "scalar") return Standardization::Mode::Scalar;
    if (s == "per_feature") return Standardization::Mode::PerFeature;
    throw ConfigError("unknown standardization mode \"" + s + "\"");
}

const char* to_string(Standardization::Mode m) {
    return m == Standardization::Mode::Scalar ? "scalar" : "per_feature";
}

std::vector<double> Standardization::apply(std::span<const float> v) const {
    if (v.size() != mean.size()) {
        throw ArgumentError("vector dimension " + std::to_string(v.size()) +
                            " does not match probe dimension " + std::to_string(mean.size()));
    }
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = (static_cast<double>(v[i]) - mean[i]) / scale[i];
    return out;
}

std::vector<double> Standardization::apply(const std::vector<double>& v) const {
    if (v.size() != mean.size()) {
        throw ArgumentError("vector dimension mismatch in standardization");
    }
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean[i]) / scale[i];
    return out;
}

Standardization compute_standardization(const std::vector<std::vector<double>>& rows,
                                        Standardization::Mode mode) {
    if (rows.empty()) {
        throw ArgumentError("cannot standardize an empty feature set");
    }
    const size_t dim = rows[0].size();
    const double n = static_cast<double>(rows.size());
    Standardization st;
    st.mode = mode;
    st.mean.assign(dim, 0.0);
    st.scale.assign(dim, 1.0);
    for (const auto& r : rows) {
        for (size_t j = 0; j < dim; ++j) st.mean[j] += r[j];
    }
    for (double& m : st.mean) m /= n;

    std::vector<double> var(dim, 0.0);
    for (const auto& r : rows) {
        for (size_t j = 0; j < dim; ++j) {
            const double d = r[j] - st.mean[j];
            var[j] += d * d;
        }
    }
    for (double& v : var) v = std::sqrt(v / n);

    constexpr double kMinScale = 1e-12;
    if (mode == Standardization::Mode::PerFeature) {
        for (size_t j = 0; j < dim; ++j) st.scale[j] = std::max(var[j], kMinScale);
    } else {
        double s = 0.0;
        for (size_t j = 0; j < dim; ++j) s += var[j];
        s = std::max(s / static_cast<double>(dim), kMinScale);
        std::fill(st.scale.begin(), st.scale.end(), s);
    }
    return st;
}

double ProbeDirection::score(std::span<const float> vec) const {
    const auto z = standardization.apply(vec);
    double s = bias;
    for (size_t i = 0; i < z.size(); ++i) s += weights[i] * z[i];
    return s;
}

double ProbeDirection::score(const std::vector<double>& vec) const {
    const auto z = standardization.apply(vec);
    double s = bias;
    for (size_t i = 0; i < z.size(); ++i) s += weights[i] * z[i];
    return s;
}

std::vector<double> ProbeDirection::unstandardized_weights() const {
    std::vector<double> w(weights.size());
    for (size_t i = 0; i < weights.size(); ++i) w[i] = weights[i] / standardization.scale[i];
    return w;
}

double probe_score(const ProbeDirection& probe, const ActivationRecord& record) {
    if (record.layer != probe.layer) {
        throw ArgumentError("record layer " + std::to_string(record.layer) +
                            " does not match probe layer " + std::to_string(probe.layer));
    }
    return probe.score(std::span<const float>(record.vector));
}

namespace {

std::vector<double> to_double(const std::vector<float>& v) {
    return {v.begin(), v.end()};
}

// Fetches one answer-token record, accumulating missing keys instead of
// throwing one at a time.
std::optional<ActivationRecord> fetch(const ActivationStore& store, const RecordKey& key,
                                      std::vector<std::string>& missing) {
    if (!store.contains(key)) {
        if (missing.size() < 8) missing.push_back(key.str());
        else if (missing.size() == 8) missing.push_back("...");
        return std::nullopt;
    }
    return store.get(key);
}

[[noreturn]] void throw_missing(const std::vector<std::string>& missing) {
    std::string msg = "missing activation records: ";
    for (size_t i = 0; i < missing.size(); ++i) {
        if (i) msg += ", ";
        msg += missing[i];
    }
    msg += " (run `driftprobe extract` with a matching config first)";
    throw MissingDataError(msg);
}

} // namespace

LabeledFeatures assemble_training_set(const QADataset& ds, const std::vector<TrainContext>& contexts,
                                      const ActivationStore& store, int layer) {
    if (contexts.empty()) {
        throw ArgumentError("no contexts: the training protocol needs at least one context");
    }
    LabeledFeatures out;
    out.layer = layer;
    std::vector<std::string> missing;
    for (const auto& ctx : contexts) {
        out.context_tags.push_back(ctx.label());
        for (const auto& item : ds.items) {
            for (Answer answer : {Answer::Yes, Answer::No}) {
                RecordKey key{ctx.tag, ctx.turn, item.id, to_string(answer), layer};
                auto rec = fetch(store, key, missing);
                if (!rec) continue;
                out.rows.push_back(to_double(rec->vector));
                out.labels.push_back(answer == item.factual_answer ? 1 : 0);
                out.item_ids.push_back(item.id);
                out.answers.push_back(answer);
                out.row_context_labels.push_back(ctx.label());
            }
        }
    }
    if (!missing.empty()) throw_missing(missing);
    return out;
}

ProbeDirection fit_probe(const LabeledFeatures& features, const FitOptions& options) {
    ProbeDirection probe;
    probe.layer = features.layer;
    probe.lambda = options.lambda;
    probe.standardization = compute_standardization(features.rows, options.std_mode);

    std::vector<std::vector<double>> standardized;
    standardized.reserve(features.rows.size());
    for (const auto& r : features.rows) standardized.push_back(probe.standardization.apply(r));

    const LogisticFit fit =
        fit_logistic_l2(standardized, features.labels, options.lambda, options.grad_tol);
    probe.weights = fit.weights;
    probe.bias = fit.bias;

    std::set<std::string> tags(features.context_tags.begin(), features.context_tags.end());
    probe.train_context_tags.assign(tags.begin(), tags.end());
    return probe;
}

double probe_accuracy(const ProbeDirection& probe, const LabeledFeatures& features) {
    if (features.rows.empty()) {
        throw ArgumentError("cannot compute accuracy on an empty feature set");
    }
    size_t correct = 0;
    for (size_t i = 0; i < features.rows.size(); ++i) {
        const bool predicted_factual = probe.score(features.rows[i]) > 0.0;
        if (predicted_factual == (features.labels[i] == 1)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(features.rows.size());
}

namespace {

struct ItemScores {
    std::string item_id;
    double phi_factual;
    double phi_nonfactual;
};

std::vector<ItemScores> scores_at_turn(const ProbeDirection& probe, const QADataset& ds,
                                       const ConversationScript& script, int turn,
                                       const ActivationStore& store) {
    const std::string tag = context_tag_for_turn(script, turn);
    std::vector<ItemScores> out;
    std::vector<std::string> missing;
    for (const auto& item : ds.items) {
        RecordKey key_f{tag, turn, item.id, to_string(item.factual_answer), probe.layer};
        RecordKey key_nf{tag, turn, item.id, to_string(negate_answer(item.factual_answer)),
                         probe.layer};
        auto rec_f = fetch(store, key_f, missing);
        auto rec_nf = fetch(store, key_nf, missing);
        if (!rec_f || !rec_nf) continue;
        out.push_back({item.id, probe_score(probe, *rec_f), probe_score(probe, *rec_nf)});
    }
    if (!missing.empty()) throw_missing(missing);
    return out;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double h = q * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double w = h - std::floor(h);
    return sorted[lo] * (1.0 - w) + sorted[hi] * w;
}

} // namespace

MarginPoint margin_at_turn(const ProbeDirection& probe, const QADataset& ds,
                           const ConversationScript& script, int turn, const ActivationStore& store,
                           int resamples, uint64_t seed) {
    if (resamples < 0) {
        throw ArgumentError("bootstrap resample count must be >= 0");
    }
    const auto scores = scores_at_turn(probe, ds, script, turn, store);

    MarginPoint point;
    point.turn = turn;
    point.resamples = resamples;
    for (const auto& s : scores) {
        point.per_question_margins.emplace_back(s.item_id, s.phi_factual - s.phi_nonfactual);
    }
    const size_t n = point.per_question_margins.size();
    double sum = 0.0;
    for (const auto& [id, m] : point.per_question_margins) sum += m;
    point.margin_sum = sum;
    point.mean_margin = n > 0 ? sum / static_cast<double>(n) : 0.0;

    if (resamples > 0 && n > 0) {
        Rng rng(seed);
        std::vector<double> means(static_cast<size_t>(resamples));
        for (auto& mean : means) {
            double s = 0.0;
            for (size_t i = 0; i < n; ++i) {
                s += point.per_question_margins[rng.next_below(n)].second;
            }
            mean = s / static_cast<double>(n);
        }
        std::sort(means.begin(), means.end());
        const double tail = (1.0 - point.ci_level) / 2.0;
        point.ci_low = quantile_sorted(means, tail);
        point.ci_high = quantile_sorted(means, 1.0 - tail);
        // The interval is required to bracket the point estimate.
        point.ci_low = std::min(point.ci_low, point.mean_margin);
        point.ci_high = std::max(point.ci_high, point.mean_margin);
    } else {
        point.ci_low = point.ci_high = point.mean_margin;
    }
    return point;
}

std::map<std::string, std::vector<MarginPoint>> turn_series(
    const ProbeDirection& probe, const std::vector<const QADataset*>& datasets,
    const ConversationScript& script, const ActivationStore& store, int resamples, uint64_t seed) {
    std::map<std::string, std::vector<MarginPoint>> out;
    for (const QADataset* ds : datasets) {
        auto& series = out[ds->name];
        for (int t = 0; t <= script.turn_count(); ++t) {
            const uint64_t sub_seed =
                hash_combine(seed, hash_combine(hash_str(ds->name), static_cast<uint64_t>(t)));
            series.push_back(margin_at_turn(probe, *ds, script, t, store, resamples, sub_seed));
        }
    }
    return out;
}

std::vector<AnswerwiseScore> answerwise_scores(const ProbeDirection& probe, const QADataset& ds,
                                               const ConversationScript& script, int turn,
                                               const ActivationStore& store) {
    std::vector<AnswerwiseScore> out;
    for (const auto& s : scores_at_turn(probe, ds, script, turn, store)) {
        out.push_back({s.item_id, s.phi_factual, s.phi_nonfactual});
    }
    return out;
}

LayerSweepResult layer_sweep(const QADataset& train, const QADataset& holdout,
                             const SweepSpec& spec, const ActivationStore& store,
                             const FitOptions& options) {
    LayerSweepResult result;
    for (const auto& ctx : spec.eval_contexts) result.selection_contexts.push_back(ctx.label());

    double best_mean = -1.0;
    int best_layer = 0;
    for (int layer = 0; layer < store.descriptor().n_layers; ++layer) {
        const auto train_features = assemble_training_set(train, spec.train_contexts, store, layer);
        const ProbeDirection probe = fit_probe(train_features, options);

        auto& row = result.per_layer[layer];
        double mean = 0.0;
        for (const auto& ctx : spec.eval_contexts) {
            const auto eval_features = assemble_training_set(holdout, {ctx}, store, layer);
            const double acc = probe_accuracy(probe, eval_features);
            row[ctx.label()] = acc;
            mean += acc;
        }
        mean /= static_cast<double>(spec.eval_contexts.size());
        if (mean > best_mean) { // strict: ties keep the lowest layer
            best_mean = mean;
            best_layer = layer;
        }
    }
    result.selected_layer = best_layer;
    return result;
}

void save_probe(const ProbeDirection& probe, const std::filesystem::path& base) {
    nlohmann::json doc;
    doc["format"] = "driftprobe.probe.v1";
    doc["layer"] = probe.layer;
    doc["lambda"] = probe.lambda;
    doc["bias"] = probe.bias;
    doc["train_context_tags"] = probe.train_context_tags;
    doc["holdout_metrics"] = probe.holdout_metrics;
    doc["standardization"] = {{"mode", to_string(probe.standardization.mode)},
                              {"mean", probe.standardization.mean},
                              {"scale", probe.standardization.scale}};

    BackendDescriptor desc;
    desc.backend_id = "probe:" + base.filename().string();
    desc.hidden_dim = static_cast<int>(probe.weights.size());
    desc.n_layers = probe.layer + 1;
    {
        ActivationStore weights_store = ActivationStore::open_for_write(base, desc);
        ActivationRecord rec;
        rec.context_id = "probe";
        rec.turn = 0;
        rec.item_id = "weights";
        rec.answer = std::nullopt;
        rec.layer = probe.layer;
        rec.vector.assign(probe.weights.begin(), probe.weights.end());
        weights_store.put(rec);
    }

    auto jpath = base;
    jpath += ".json";
    std::ofstream out(jpath, std::ios::trunc);
    if (!out) {
        throw StoreError("cannot write probe file " + jpath.string());
    }
    out << doc.dump(2) << "\n";
}

ProbeDirection load_probe(const std::filesystem::path& base) {
    auto jpath = base;
    jpath += ".json";
    std::ifstream in(jpath);
    if (!in) {
        throw MissingDataError("cannot open probe file " + jpath.string() +
                               " (run `driftprobe fit` first)");
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(jpath.string() + ": " + e.what());
    }
    ProbeDirection probe;
    try {
        probe.layer = doc.at("layer").get<int>();
        probe.lambda = doc.at("lambda").get<double>();
        probe.bias = doc.at("bias").get<double>();
        probe.train_context_tags = doc.at("train_context_tags").get<std::vector<std::string>>();
        probe.holdout_metrics = doc.at("holdout_metrics").get<std::map<std::string, double>>();
        const auto& st = doc.at("standardization");
        probe.standardization.mode = standardization_mode_from_string(st.at("mode").get<std::string>());
        probe.standardization.mean = st.at("mean").get<std::vector<double>>();
        probe.standardization.scale = st.at("scale").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(jpath.string() + ": " + e.what());
    }

    const ActivationStore weights_store = ActivationStore::open_for_read(base);
    const auto rec = weights_store.get({"probe", 0, "weights", "none", probe.layer});
    probe.weights.assign(rec.vector.begin(), rec.vector.end());
    if (probe.weights.size() != probe.standardization.mean.size()) {
        throw ValidationError("probe weight vector does not match standardization dimension");
    }
    return probe;
}

} // namespace driftprobe
