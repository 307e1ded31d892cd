#include "driftprobe/ccs.hpp"

#include <algorithm>
#include <cmath>

#include "driftprobe/errors.hpp"
#include "driftprobe/rng.hpp"

namespace driftprobe {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void group_stats(const std::vector<const std::vector<float>*>& vecs, std::vector<double>& mean,
                 double& scale) {
    const size_t dim = vecs.front()->size();
    const double n = static_cast<double>(vecs.size());
    mean.assign(dim, 0.0);
    for (const auto* v : vecs) {
        for (size_t j = 0; j < dim; ++j) mean[j] += static_cast<double>((*v)[j]);
    }
    for (double& m : mean) m /= n;

    double std_sum = 0.0;
    for (size_t j = 0; j < dim; ++j) {
        double var = 0.0;
        for (const auto* v : vecs) {
            const double d = static_cast<double>((*v)[j]) - mean[j];
            var += d * d;
        }
        std_sum += std::sqrt(var / n);
    }
    scale = std_sum / static_cast<double>(dim);
}

} // namespace

NormalizedPairs normalize_pairs(const std::vector<ContrastPair>& pairs) {
    if (pairs.size() < 2) {
        throw ArgumentError("need at least 2 contrast pairs to normalize");
    }
    const size_t dim = pairs.front().x_yes.size();
    for (const auto& p : pairs) {
        if (p.x_yes.size() != dim || p.x_no.size() != dim) {
            throw ValidationError("contrast pair dimensions differ");
        }
    }
    std::vector<const std::vector<float>*> yes_group, no_group;
    for (const auto& p : pairs) {
        yes_group.push_back(&p.x_yes);
        no_group.push_back(&p.x_no);
    }

    NormalizedPairs out;
    group_stats(yes_group, out.norms.mean_yes, out.norms.scale_yes);
    group_stats(no_group, out.norms.mean_no, out.norms.scale_no);
    if (out.norms.scale_yes <= 1e-12 || out.norms.scale_no <= 1e-12) {
        throw ValidationError("zero-variance answer group: contrast pairs carry no signal");
    }

    for (const auto& p : pairs) {
        NormalizedPair np;
        np.item_id = p.item_id;
        np.x_yes.resize(dim);
        np.x_no.resize(dim);
        for (size_t j = 0; j < dim; ++j) {
            np.x_yes[j] = (static_cast<double>(p.x_yes[j]) - out.norms.mean_yes[j]) / out.norms.scale_yes;
            np.x_no[j] = (static_cast<double>(p.x_no[j]) - out.norms.mean_no[j]) / out.norms.scale_no;
        }
        out.pairs.push_back(std::move(np));
    }
    return out;
}

double ccs_loss(double p_yes, double p_no) {
    if (!(p_yes >= 0.0 && p_yes <= 1.0) || !(p_no >= 0.0 && p_no <= 1.0)) {
        throw ArgumentError("ccs_loss expects probabilities in [0, 1]");
    }
    const double consistency = p_yes - (1.0 - p_no);
    const double confidence = std::min(p_yes, p_no);
    return consistency * consistency + confidence * confidence;
}

namespace {

struct CcsRun {
    std::vector<double> weights;
    double bias = 0.0;
    double loss = 0.0;
};

double mean_ccs_loss(const std::vector<NormalizedPair>& pairs, const std::vector<double>& w,
                     double b) {
    double total = 0.0;
    for (const auto& p : pairs) {
        double zy = b, zn = b;
        for (size_t j = 0; j < w.size(); ++j) {
            zy += w[j] * p.x_yes[j];
            zn += w[j] * p.x_no[j];
        }
        total += ccs_loss(sigmoid(zy), sigmoid(zn));
    }
    return total / static_cast<double>(pairs.size());
}

CcsRun run_ccs_once(const std::vector<NormalizedPair>& pairs, uint64_t seed,
                    const CcsOptions& options) {
    const size_t dim = pairs.front().x_yes.size();
    Rng rng(seed);
    CcsRun run;
    run.weights.resize(dim);
    const double init_scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (auto& w : run.weights) w = rng.next_gaussian() * init_scale;
    run.bias = 0.0;

    // Adam with the fixed step budget; deterministic given the seed.
    std::vector<double> m(dim + 1, 0.0), v(dim + 1, 0.0);
    std::vector<double> grad(dim + 1, 0.0);
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double inv_n = 1.0 / static_cast<double>(pairs.size());

    for (int step = 1; step <= options.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const auto& p : pairs) {
            double zy = run.bias, zn = run.bias;
            for (size_t j = 0; j < dim; ++j) {
                zy += run.weights[j] * p.x_yes[j];
                zn += run.weights[j] * p.x_no[j];
            }
            const double py = sigmoid(zy);
            const double pn = sigmoid(zn);
            // d/dz of (py - (1 - pn))^2 + min(py, pn)^2
            const double cons = 2.0 * (py - (1.0 - pn));
            double gy = cons * py * (1.0 - py);
            double gn = cons * pn * (1.0 - pn);
            if (py < pn) {
                gy += 2.0 * py * py * (1.0 - py);
            } else if (pn < py) {
                gn += 2.0 * pn * pn * (1.0 - pn);
            } else {
                gy += py * py * (1.0 - py);
                gn += pn * pn * (1.0 - pn);
            }
            for (size_t j = 0; j < dim; ++j) {
                grad[j] += (gy * p.x_yes[j] + gn * p.x_no[j]) * inv_n;
            }
            grad[dim] += (gy + gn) * inv_n;
        }
        const double bc1 = 1.0 - std::pow(beta1, step);
        const double bc2 = 1.0 - std::pow(beta2, step);
        for (size_t j = 0; j <= dim; ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
            const double update = options.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
            if (j < dim) run.weights[j] -= update;
            else run.bias -= update;
        }
    }
    run.loss = mean_ccs_loss(pairs, run.weights, run.bias);
    return run;
}

NormalizedPair normalize_single(const GroupNorms& norms, const ContrastPair& pair) {
    NormalizedPair np;
    np.item_id = pair.item_id;
    const size_t dim = pair.x_yes.size();
    np.x_yes.resize(dim);
    np.x_no.resize(dim);
    for (size_t j = 0; j < dim; ++j) {
        np.x_yes[j] = (static_cast<double>(pair.x_yes[j]) - norms.mean_yes[j]) / norms.scale_yes;
        np.x_no[j] = (static_cast<double>(pair.x_no[j]) - norms.mean_no[j]) / norms.scale_no;
    }
    return np;
}

} // namespace

double ccs_predict_yes_true(const CCSProbe& probe, const NormalizedPair& pair) {
    double zy = probe.bias, zn = probe.bias;
    for (size_t j = 0; j < probe.weights.size(); ++j) {
        zy += probe.weights[j] * pair.x_yes[j];
        zn += probe.weights[j] * pair.x_no[j];
    }
    return 0.5 * (sigmoid(zy) + (1.0 - sigmoid(zn)));
}

double ccs_accuracy(const CCSProbe& probe, const std::vector<LabeledPair>& pairs) {
    if (pairs.empty()) {
        throw ArgumentError("cannot compute CCS accuracy on zero pairs");
    }
    std::vector<ContrastPair> raw;
    raw.reserve(pairs.size());
    for (const auto& lp : pairs) raw.push_back(lp.pair);
    const auto normalized = normalize_pairs(raw);

    size_t correct = 0;
    for (size_t i = 0; i < pairs.size(); ++i) {
        const bool predicted_yes_true = ccs_predict_yes_true(probe, normalized.pairs[i]) > 0.5;
        if (predicted_yes_true == pairs[i].yes_is_factual) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

CCSProbe train_ccs(const std::vector<ContrastPair>& pairs, const std::vector<LabeledPair>& calibration,
                   int restarts, uint64_t seed, const CcsOptions& options) {
    if (pairs.size() < 4) {
        throw ArgumentError("train_ccs needs at least 4 contrast pairs");
    }
    if (restarts < 1) {
        throw ArgumentError("restarts must be >= 1");
    }
    const auto normalized = normalize_pairs(pairs);

    CcsRun best;
    bool have_best = false;
    for (int r = 0; r < restarts; ++r) {
        const auto run = run_ccs_once(normalized.pairs,
                                      hash_combine(seed, static_cast<uint64_t>(r)), options);
        if (!std::isfinite(run.loss)) continue;
        if (!have_best || run.loss < best.loss) {
            best = run;
            have_best = true;
        }
    }
    if (!have_best) {
        throw ValidationError("CCS optimization diverged on every restart");
    }

    CCSProbe probe;
    probe.weights = best.weights;
    probe.bias = best.bias;
    probe.group_norms = normalized.norms;
    probe.run_seed = seed;
    probe.train_loss = best.loss;
    probe.sign = 1;

    if (!calibration.empty()) {
        const double acc = ccs_accuracy(probe, calibration);
        if (acc < 0.5) {
            // sigma(-z) = 1 - sigma(z): negation swaps the two probabilities and
            // leaves the consistency term of the loss unchanged.
            for (auto& w : probe.weights) w = -w;
            probe.bias = -probe.bias;
            probe.sign = -1;
        }
        probe.holdout_accuracy = ccs_accuracy(probe, calibration);
    }
    return probe;
}

std::vector<ContrastPair> pairs_from_store(const QADataset& ds, const std::string& context_tag,
                                           int turn, int layer, const ActivationStore& store) {
    std::vector<ContrastPair> pairs;
    std::vector<std::string> missing;
    for (const auto& item : ds.items) {
        const RecordKey key_yes{context_tag, turn, item.id, "Yes", layer};
        const RecordKey key_no{context_tag, turn, item.id, "No", layer};
        if (!store.contains(key_yes) || !store.contains(key_no)) {
            if (missing.size() < 8) {
                missing.push_back((store.contains(key_yes) ? key_no : key_yes).str());
            }
            continue;
        }
        pairs.push_back({item.id, store.get(key_yes).vector, store.get(key_no).vector});
    }
    if (!missing.empty()) {
        std::string msg = "missing activation records for contrast pairs: ";
        for (size_t i = 0; i < missing.size(); ++i) {
            if (i) msg += ", ";
            msg += missing[i];
        }
        msg += " (run `driftprobe extract` first)";
        throw MissingDataError(msg);
    }
    return pairs;
}

std::vector<LabeledPair> labeled_pairs_from_store(const QADataset& ds, const std::string& context_tag,
                                                  int turn, int layer, const ActivationStore& store) {
    const auto pairs = pairs_from_store(ds, context_tag, turn, layer, store);
    std::vector<LabeledPair> labeled;
    labeled.reserve(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        labeled.push_back({pairs[i], ds.items[i].factual_answer == Answer::Yes});
    }
    return labeled;
}

CcsCampaignReport ccs_campaign(int layer, const QADataset& ds_train, const QADataset& ds_holdout,
                               const std::vector<CcsCondition>& conditions,
                               const ActivationStore& store, int n_runs, double filter_threshold,
                               uint64_t seed, const CcsOptions& options) {
    if (n_runs < 1) {
        throw ArgumentError("ccs_campaign needs n_runs >= 1");
    }
    const auto train_pairs = pairs_from_store(ds_train, "empty", 0, layer, store);
    const auto holdout_pairs = labeled_pairs_from_store(ds_holdout, "empty", 0, layer, store);

    std::vector<std::pair<std::string, std::vector<LabeledPair>>> condition_pairs;
    for (const auto& c : conditions) {
        condition_pairs.emplace_back(
            c.label(), labeled_pairs_from_store(*c.dataset, c.context_tag, c.turn, layer, store));
    }

    CcsCampaignReport report;
    report.n_runs = n_runs;
    report.filter_threshold = filter_threshold;
    for (int run = 0; run < n_runs; ++run) {
        const uint64_t run_seed = hash_combine(seed, hash_combine(hash_str("ccs_run"), run));
        const CCSProbe probe = train_ccs(train_pairs, holdout_pairs, 10, run_seed, options);
        report.filter_accuracies.push_back(probe.holdout_accuracy);
        if (probe.holdout_accuracy < filter_threshold) continue;
        ++report.kept_runs;
        for (const auto& [label, pairs] : condition_pairs) {
            report.accuracies[label].push_back(ccs_accuracy(probe, pairs));
        }
    }
    report.no_runs_passed = report.kept_runs == 0;
    for (const auto& [label, accs] : report.accuracies) {
        double sum = 0.0;
        for (double a : accs) sum += a;
        report.mean_accuracy[label] = accs.empty() ? 0.0 : sum / static_cast<double>(accs.size());
    }
    return report;
}

} // namespace driftprobe
