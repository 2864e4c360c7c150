#pragma once

#include "rclarc/core_math.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rclarc {

// Dense feed-forward network. Layer k (1-based) maps layer_dims[k-1] -> layer_dims[k]
// via z = W_k a + b_k; ReLU on every hidden layer, identity on the output.
// The split layer l separates the feature extractor (layers 1..l) from the head
// (layers l+1..L).
struct MlpModel {
    std::vector<std::size_t> layer_dims;
    std::vector<Matrix> weights;  // weights[k-1] is out x in
    std::vector<Vector> biases;
    std::size_t split_layer = 1;
    nlohmann::json metadata = nlohmann::json::object();

    std::size_t num_layers() const noexcept { return weights.size(); }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
    std::size_t feature_dim() const { return layer_dims.at(split_layer); }

    // Throws InvalidArgument / DimensionMismatch on inconsistent shapes.
    void validate() const;
};

// He-uniform init: W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)) drawn row-major layer by
// layer from SplitMix64(seed); biases start at zero.
MlpModel make_mlp(std::vector<std::size_t> layer_dims, std::size_t split_layer, std::uint64_t seed);

// Post-activation output of `layer` (0 = the input itself).
Vector activation_at(const MlpModel& model, std::size_t layer, std::span<const double> x);
// Applies layers layer+1 .. L to an activation of `layer`.
Vector forward_from(const MlpModel& model, std::size_t layer, std::span<const double> a);

Vector forward_features(const MlpModel& model, std::span<const double> x);
Vector forward_head(const MlpModel& model, std::span<const double> a);
Vector forward(const MlpModel& model, std::span<const double> x);

// Argmax with ties broken by the lowest index.
std::size_t argmax(std::span<const double> logits);
std::size_t predict_class(const MlpModel& model, std::span<const double> x);

// Softmax cross-entropy of one sample (log-sum-exp stabilized).
double cross_entropy(std::span<const double> logits, std::size_t label);

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    double loss = 0.0;

    void add_scaled(const Gradients& other, double factor);
};

Gradients zero_gradients(const MlpModel& model);
// Analytic gradient of cross_entropy(forward(x), label) w.r.t. every parameter.
Gradients loss_gradients(const MlpModel& model, std::span<const double> x, std::size_t label);

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
    Optimizer optimizer = Optimizer::Adam;
    double learning_rate = 0.01;
    std::size_t epochs = 100;
    // nullopt = full batch. Minibatches use a seeded Fisher-Yates shuffle per epoch.
    std::optional<std::size_t> batch_size;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
};

struct TrainResult {
    MlpModel model;
    std::vector<double> loss_history;  // mean training loss per epoch (before the epoch's updates)
    double train_accuracy = 0.0;
};

// Throws InvalidArgument for an empty dataset, bad labels or epochs == 0; throws
// NonFiniteLoss if the loss diverges.
TrainResult train(MlpModel model, const Matrix& samples, std::span<const std::size_t> labels,
                  const TrainConfig& config);

double accuracy(const MlpModel& model, const Matrix& samples, std::span<const std::size_t> labels);

struct GradientCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    // Parameters whose +/-eps perturbation flipped a ReLU gate; excluded from the max.
    std::size_t skipped_at_kink = 0;
};

// Compares loss_gradients against central differences (step eps) on every
// weight and bias. Relative error is |g - fd| / max(|g|, |fd|, 1e-6).
GradientCheckResult gradient_check(const MlpModel& model, std::span<const double> x, std::size_t label,
                                   double eps);

nlohmann::json model_to_json(const MlpModel& model);
MlpModel model_from_json(const nlohmann::json& doc);
void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

const char* optimizer_name(Optimizer optimizer);
Optimizer optimizer_from_name(const std::string& name);

}  // namespace rclarc
