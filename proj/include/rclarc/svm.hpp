#pragma once

#include "rclarc/core_math.hpp"

#include <cstdint>
#include <span>

namespace rclarc {

struct SvmConfig {
    // Objective: lambda/2 |w|^2 + (1/W) sum_i c_i max(0, 1 - y_i (w.x_i + b))^2,
    // with c_i = n / (2 n_{y_i}) ("balanced" class weights) and W = sum_i c_i.
    double lambda = 1e-3;
    std::size_t max_iterations = 5000;
    // Converged once the gradient norm falls below tolerance * (1 + |initial gradient|).
    double tolerance = 1e-8;
    bool balance_classes = true;
    std::uint64_t seed = 0;
};

struct SvmModel {
    Vector weight;
    double bias = 0.0;
    double objective = 0.0;
    std::size_t iterations = 0;
    bool converged = false;

    double decision(std::span<const double> x) const;
};

// Linear SVM with squared hinge loss and L2 penalty (bias unpenalized).
// Positives get y = +1, negatives y = -1. Solved by batch gradient descent with
// Nesterov momentum, constant step 1/L where L bounds the objective's curvature
// (power iteration on the weighted second-moment matrix), and adaptive restart
// whenever the objective increases. A run that exhausts max_iterations returns
// the best iterate with converged == false.
SvmModel train_linear_svm(std::span<const Vector> positives, std::span<const Vector> negatives,
                          const SvmConfig& config);

}  // namespace rclarc
