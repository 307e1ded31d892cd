#pragma once

#include <vector>

namespace driftprobe {

struct LogisticFit {
    std::vector<double> weights;
    double bias = 0.0;
    double grad_norm = 0.0;
    int newton_iterations = 0;
};

// Minimizes mean logistic loss + lambda/2 * ||w||^2 (bias unpenalized) by
// Newton-CG with backtracking line search. The problem is convex and the
// start point fixed, so the result is deterministic. labels are 0/1.
LogisticFit fit_logistic_l2(const std::vector<std::vector<double>>& rows,
                            const std::vector<int>& labels, double lambda,
                            double grad_tol = 1e-8, int max_newton_iter = 200);

} // namespace driftprobe
