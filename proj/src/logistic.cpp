#include "driftprobe/logistic.hpp"

#include <cmath>

#include "driftprobe/errors.hpp"

namespace driftprobe {

namespace {

// log(1 + exp(x)) without overflow
double softplus(double x) {
    return std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0);
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct Problem {
    const std::vector<std::vector<double>>& rows;
    const std::vector<double>& signs; // +1 for label 1, -1 for label 0
    double lambda;
    size_t dim;

    // Parameter vector layout: [w_0 .. w_{d-1}, b].
    double margin(const std::vector<double>& p, size_t i) const {
        const auto& x = rows[i];
        double m = p[dim];
        for (size_t j = 0; j < dim; ++j) m += p[j] * x[j];
        return m;
    }

    double value(const std::vector<double>& p) const {
        double loss = 0.0;
        for (size_t i = 0; i < rows.size(); ++i) {
            loss += softplus(-signs[i] * margin(p, i));
        }
        loss /= static_cast<double>(rows.size());
        double reg = 0.0;
        for (size_t j = 0; j < dim; ++j) reg += p[j] * p[j];
        return loss + 0.5 * lambda * reg;
    }

    std::vector<double> gradient(const std::vector<double>& p) const {
        std::vector<double> g(dim + 1, 0.0);
        const double inv_n = 1.0 / static_cast<double>(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            const double coeff = -signs[i] * sigmoid(-signs[i] * margin(p, i)) * inv_n;
            const auto& x = rows[i];
            for (size_t j = 0; j < dim; ++j) g[j] += coeff * x[j];
            g[dim] += coeff;
        }
        for (size_t j = 0; j < dim; ++j) g[j] += lambda * p[j];
        return g;
    }

    // H v where H is the Hessian at p (never materialized).
    std::vector<double> hessian_vec(const std::vector<double>& p, const std::vector<double>& v) const {
        std::vector<double> hv(dim + 1, 0.0);
        const double inv_n = 1.0 / static_cast<double>(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            const double s = sigmoid(margin(p, i));
            const double d = s * (1.0 - s);
            const auto& x = rows[i];
            double xv = v[dim];
            for (size_t j = 0; j < dim; ++j) xv += x[j] * v[j];
            const double coeff = d * xv * inv_n;
            for (size_t j = 0; j < dim; ++j) hv[j] += coeff * x[j];
            hv[dim] += coeff;
        }
        for (size_t j = 0; j < dim; ++j) hv[j] += lambda * v[j];
        return hv;
    }
};

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Conjugate gradient on H p = -g.
std::vector<double> cg_solve(const Problem& prob, const std::vector<double>& params,
                             const std::vector<double>& g) {
    const size_t n = g.size();
    std::vector<double> p(n, 0.0);
    std::vector<double> r(n);
    for (size_t i = 0; i < n; ++i) r[i] = -g[i];
    std::vector<double> d = r;
    double r2 = dot(r, r);
    const double tol = std::min(0.5, std::sqrt(norm2(g))) * norm2(g);
    const size_t max_iter = 2 * n + 10;
    for (size_t it = 0; it < max_iter && std::sqrt(r2) > std::max(tol, 1e-14); ++it) {
        const auto hd = prob.hessian_vec(params, d);
        const double dhd = dot(d, hd);
        if (dhd <= 0.0) break; // safeguard; lambda > 0 keeps H positive definite
        const double alpha = r2 / dhd;
        for (size_t i = 0; i < n; ++i) p[i] += alpha * d[i];
        for (size_t i = 0; i < n; ++i) r[i] -= alpha * hd[i];
        const double r2_new = dot(r, r);
        const double beta = r2_new / r2;
        r2 = r2_new;
        for (size_t i = 0; i < n; ++i) d[i] = r[i] + beta * d[i];
    }
    return p;
}

} // namespace

LogisticFit fit_logistic_l2(const std::vector<std::vector<double>>& rows,
                            const std::vector<int>& labels, double lambda, double grad_tol,
                            int max_newton_iter) {
    if (rows.empty() || rows.size() != labels.size()) {
        throw ArgumentError("feature rows and labels must be non-empty and equal length");
    }
    if (!(lambda > 0.0)) {
        throw ArgumentError("regularization strength must be > 0");
    }
    const size_t dim = rows[0].size();
    size_t pos = 0, neg = 0;
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != dim) {
            throw ValidationError("ragged feature matrix");
        }
        for (double v : rows[i]) {
            if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
        }
        (labels[i] ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) {
        throw ValidationError("single-class labels: cannot fit a separator");
    }
    if (pos < 2 || neg < 2) {
        throw ValidationError("need at least 2 rows per class, got " + std::to_string(pos) +
                              "/" + std::to_string(neg));
    }

    std::vector<double> signs(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) signs[i] = labels[i] ? 1.0 : -1.0;
    Problem prob{rows, signs, lambda, dim};

    std::vector<double> params(dim + 1, 0.0);
    double fval = prob.value(params);
    LogisticFit fit;
    for (int iter = 0; iter < max_newton_iter; ++iter) {
        const auto g = prob.gradient(params);
        fit.grad_norm = norm2(g);
        fit.newton_iterations = iter;
        if (fit.grad_norm <= grad_tol) break;

        const auto step = cg_solve(prob, params, g);
        const double slope = dot(g, step);
        double t = 1.0;
        std::vector<double> trial(params.size());
        while (true) {
            for (size_t i = 0; i < params.size(); ++i) trial[i] = params[i] + t * step[i];
            const double ftrial = prob.value(trial);
            if (ftrial <= fval + 1e-4 * t * slope || t < 1e-12) {
                params = trial;
                fval = ftrial;
                break;
            }
            t *= 0.5;
        }
    }
    fit.weights.assign(params.begin(), params.begin() + static_cast<long>(dim));
    fit.bias = params[dim];
    fit.grad_norm = norm2(prob.gradient(params));
    return fit;
}

} // namespace driftprobe
