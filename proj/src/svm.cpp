#include "rclarc/svm.hpp"
#include "rclarc/errors.hpp"

#include <algorithm>
#include <cmath>

namespace rclarc {

double SvmModel::decision(std::span<const double> x) const { return dot(weight, x) + bias; }

namespace {

struct Problem {
    std::vector<const Vector*> x;
    std::vector<double> y;
    std::vector<double> c;  // per-sample weight, normalized so sum c == 1
    std::size_t dim = 0;
    double lambda = 0.0;
};

// Parameters are packed as (w, b).
double objective_and_gradient(const Problem& p, std::span<const double> theta, std::span<double> grad) {
    const std::size_t d = p.dim;
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < p.x.size(); ++i) {
        const Vector& xi = *p.x[i];
        double score = theta[d];
        for (std::size_t j = 0; j < d; ++j) score += theta[j] * xi[j];
        const double slack = 1.0 - p.y[i] * score;
        if (slack <= 0.0) continue;
        loss += p.c[i] * slack * slack;
        const double g = -2.0 * p.c[i] * slack * p.y[i];
        for (std::size_t j = 0; j < d; ++j) grad[j] += g * xi[j];
        grad[d] += g;
    }
    double reg = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        reg += theta[j] * theta[j];
        grad[j] += p.lambda * theta[j];
    }
    return loss + 0.5 * p.lambda * reg;
}

// Largest eigenvalue of 2 sum_i c_i x~_i x~_i^T (x~ = (x, 1)) by power iteration.
double curvature_bound(const Problem& p) {
    const std::size_t d = p.dim + 1;
    Vector v(d, 1.0 / std::sqrt(static_cast<double>(d)));
    double eig = 0.0;
    for (int it = 0; it < 100; ++it) {
        Vector w(d, 0.0);
        for (std::size_t i = 0; i < p.x.size(); ++i) {
            const Vector& xi = *p.x[i];
            double s = v[p.dim];
            for (std::size_t j = 0; j < p.dim; ++j) s += xi[j] * v[j];
            s *= 2.0 * p.c[i];
            for (std::size_t j = 0; j < p.dim; ++j) w[j] += s * xi[j];
            w[p.dim] += s;
        }
        const double n = norm(w);
        if (n == 0.0) break;
        const double next = n;
        for (std::size_t j = 0; j < d; ++j) v[j] = w[j] / n;
        if (std::abs(next - eig) <= 1e-10 * next) {
            eig = next;
            break;
        }
        eig = next;
    }
    // Power iteration approaches the top eigenvalue from below; pad it.
    return 1.05 * eig + p.lambda;
}

}  // namespace

SvmModel train_linear_svm(std::span<const Vector> positives, std::span<const Vector> negatives,
                          const SvmConfig& config) {
    if (positives.empty() || negatives.empty()) {
        throw Error(ErrorCode::InvalidArgument, "SVM needs both positive and negative samples");
    }
    if (!(config.lambda > 0.0)) throw Error(ErrorCode::InvalidArgument, "SVM lambda must be > 0");
    Problem p;
    p.dim = positives.front().size();
    p.lambda = config.lambda;
    const double n = static_cast<double>(positives.size() + negatives.size());
    const double w_pos = config.balance_classes ? n / (2.0 * static_cast<double>(positives.size())) : 1.0;
    const double w_neg = config.balance_classes ? n / (2.0 * static_cast<double>(negatives.size())) : 1.0;
    const double total = w_pos * static_cast<double>(positives.size()) + w_neg * static_cast<double>(negatives.size());
    for (const auto& x : positives) {
        require_same_dim(x.size(), p.dim, "SVM sample");
        require_finite(x, "SVM sample");
        p.x.push_back(&x);
        p.y.push_back(1.0);
        p.c.push_back(w_pos / total);
    }
    for (const auto& x : negatives) {
        require_same_dim(x.size(), p.dim, "SVM sample");
        require_finite(x, "SVM sample");
        p.x.push_back(&x);
        p.y.push_back(-1.0);
        p.c.push_back(w_neg / total);
    }

    const std::size_t d = p.dim + 1;
    const double step = 1.0 / curvature_bound(p);
    Vector theta(d, 0.0), previous(d, 0.0), lookahead(d, 0.0), grad(d, 0.0), best(d, 0.0);
    double momentum_t = 1.0;
    double current_obj = objective_and_gradient(p, theta, grad);
    const double tol = config.tolerance * (1.0 + norm(grad));
    double best_obj = current_obj;

    SvmModel model;
    std::size_t it = 0;
    for (; it < config.max_iterations; ++it) {
        objective_and_gradient(p, lookahead, grad);
        previous = theta;
        for (std::size_t j = 0; j < d; ++j) theta[j] = lookahead[j] - step * grad[j];
        Vector g_theta(d);
        const double obj = objective_and_gradient(p, theta, g_theta);
        if (obj < best_obj) {
            best_obj = obj;
            best = theta;
        }
        if (norm(g_theta) <= tol) {
            model.converged = true;
            ++it;
            break;
        }
        if (obj > current_obj) {
            // Restart: drop momentum and continue from the better point.
            momentum_t = 1.0;
            theta = previous;
            lookahead = theta;
            current_obj = std::min(current_obj, objective_and_gradient(p, theta, g_theta));
            continue;
        }
        current_obj = obj;
        const double next_t = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum_t * momentum_t));
        const double beta = (momentum_t - 1.0) / next_t;
        for (std::size_t j = 0; j < d; ++j) lookahead[j] = theta[j] + beta * (theta[j] - previous[j]);
        momentum_t = next_t;
    }
    model.weight.assign(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(p.dim));
    model.bias = best[p.dim];
    model.objective = best_obj;
    model.iterations = it;
    return model;
}

}  // namespace rclarc
