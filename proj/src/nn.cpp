#include "rclarc/nn.hpp"
#include "rclarc/errors.hpp"
#include "rclarc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace rclarc {

void MlpModel::validate() const {
    if (layer_dims.size() < 2) throw Error(ErrorCode::InvalidArgument, "network needs at least one layer");
    for (std::size_t d : layer_dims) {
        if (d == 0) throw Error(ErrorCode::InvalidArgument, "layer dimensions must be positive");
    }
    const std::size_t layers = layer_dims.size() - 1;
    if (weights.size() != layers || biases.size() != layers) {
        throw Error(ErrorCode::DimensionMismatch, "weights/biases do not match layer count");
    }
    for (std::size_t k = 0; k < layers; ++k) {
        if (weights[k].rows() != layer_dims[k + 1] || weights[k].cols() != layer_dims[k] ||
            biases[k].size() != layer_dims[k + 1]) {
            throw Error(ErrorCode::DimensionMismatch, "layer " + std::to_string(k + 1) + " has inconsistent shape");
        }
        require_finite(weights[k].values(), "weights");
        require_finite(biases[k], "biases");
    }
    if (layers >= 2 && (split_layer < 1 || split_layer > layers - 1)) {
        throw Error(ErrorCode::InvalidArgument,
                    "split layer must lie in [1, " + std::to_string(layers - 1) + "]");
    }
    if (layers == 1 && split_layer != 1) {
        throw Error(ErrorCode::InvalidArgument, "single-layer network has no hidden split");
    }
}

MlpModel make_mlp(std::vector<std::size_t> layer_dims, std::size_t split_layer, std::uint64_t seed) {
    MlpModel model;
    model.layer_dims = std::move(layer_dims);
    model.split_layer = split_layer;
    if (model.layer_dims.size() < 2) throw Error(ErrorCode::InvalidArgument, "network needs at least one layer");
    SplitMix64 rng(seed);
    for (std::size_t k = 1; k < model.layer_dims.size(); ++k) {
        const std::size_t fan_in = model.layer_dims[k - 1];
        const std::size_t fan_out = model.layer_dims[k];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        Matrix w(fan_out, fan_in);
        for (double& v : w.values()) v = rng.uniform(-limit, limit);
        model.weights.push_back(std::move(w));
        model.biases.emplace_back(fan_out, 0.0);
    }
    model.validate();
    return model;
}

namespace {

void relu_inplace(Vector& v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
}

Vector apply_layer(const MlpModel& model, std::size_t k, std::span<const double> a) {
    // k is 0-based here.
    Vector z = matvec(model.weights[k], a);
    const Vector& b = model.biases[k];
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += b[i];
    if (k + 1 < model.num_layers()) relu_inplace(z);
    return z;
}

void check_layer_index(const MlpModel& model, std::size_t layer) {
    if (layer >= model.num_layers()) {
        throw Error(ErrorCode::InvalidArgument, "layer " + std::to_string(layer) + " is not a latent layer");
    }
}

}  // namespace

Vector activation_at(const MlpModel& model, std::size_t layer, std::span<const double> x) {
    check_layer_index(model, layer);
    require_same_dim(x.size(), model.input_dim(), "network input");
    Vector a(x.begin(), x.end());
    for (std::size_t k = 0; k < layer; ++k) a = apply_layer(model, k, a);
    return a;
}

Vector forward_from(const MlpModel& model, std::size_t layer, std::span<const double> a) {
    check_layer_index(model, layer);
    require_same_dim(a.size(), model.layer_dims[layer], "activation");
    Vector out(a.begin(), a.end());
    for (std::size_t k = layer; k < model.num_layers(); ++k) out = apply_layer(model, k, out);
    return out;
}

Vector forward_features(const MlpModel& model, std::span<const double> x) {
    if (model.split_layer == 0) throw Error(ErrorCode::InvalidArgument, "the input is not a latent layer");
    return activation_at(model, model.split_layer, x);
}

Vector forward_head(const MlpModel& model, std::span<const double> a) {
    if (model.split_layer == 0) throw Error(ErrorCode::InvalidArgument, "the input is not a latent layer");
    return forward_from(model, model.split_layer, a);
}

Vector forward(const MlpModel& model, std::span<const double> x) {
    if (model.num_layers() == 1) return forward_from(model, 0, x);
    return forward_head(model, forward_features(model, x));
}

std::size_t argmax(std::span<const double> logits) {
    if (logits.empty()) throw Error(ErrorCode::InvalidArgument, "argmax of empty logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return best;
}

std::size_t predict_class(const MlpModel& model, std::span<const double> x) { return argmax(forward(model, x)); }

double cross_entropy(std::span<const double> logits, std::size_t label) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - mx);
    return std::log(s) + mx - logits[label];
}

void Gradients::add_scaled(const Gradients& other, double factor) {
    for (std::size_t k = 0; k < weights.size(); ++k) {
        axpy(factor, other.weights[k].values(), weights[k].values());
        axpy(factor, other.biases[k], biases[k]);
    }
    loss += factor * other.loss;
}

Gradients zero_gradients(const MlpModel& model) {
    Gradients g;
    for (std::size_t k = 0; k < model.num_layers(); ++k) {
        g.weights.emplace_back(model.weights[k].rows(), model.weights[k].cols());
        g.biases.emplace_back(model.biases[k].size(), 0.0);
    }
    return g;
}

Gradients loss_gradients(const MlpModel& model, std::span<const double> x, std::size_t label) {
    require_same_dim(x.size(), model.input_dim(), "network input");
    if (label >= model.output_dim()) throw Error(ErrorCode::InvalidArgument, "label out of range");
    const std::size_t layers = model.num_layers();
    std::vector<Vector> acts;  // acts[k] = post-activation of layer k
    acts.emplace_back(x.begin(), x.end());
    for (std::size_t k = 0; k < layers; ++k) acts.push_back(apply_layer(model, k, acts.back()));

    const Vector& logits = acts.back();
    Gradients g = zero_gradients(model);
    g.loss = cross_entropy(logits, label);

    // dL/dz at the output: softmax - onehot.
    const double mx = *std::max_element(logits.begin(), logits.end());
    Vector delta(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        delta[i] = std::exp(logits[i] - mx);
        s += delta[i];
    }
    for (double& d : delta) d /= s;
    delta[label] -= 1.0;

    for (std::size_t k = layers; k-- > 0;) {
        const Vector& input = acts[k];
        Matrix& gw = g.weights[k];
        for (std::size_t r = 0; r < gw.rows(); ++r) {
            auto row = gw.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] = delta[r] * input[c];
        }
        g.biases[k] = delta;
        if (k == 0) break;
        Vector prev = matvec_transposed(model.weights[k], delta);
        // ReLU gate of layer k (its post-activation is acts[k]).
        for (std::size_t i = 0; i < prev.size(); ++i) {
            if (!(acts[k][i] > 0.0)) prev[i] = 0.0;
        }
        delta = std::move(prev);
    }
    return g;
}

namespace {

void validate_training_inputs(const MlpModel& model, const Matrix& samples, std::span<const std::size_t> labels,
                              const TrainConfig& config) {
    if (samples.rows() == 0) throw Error(ErrorCode::InvalidArgument, "training set is empty");
    require_same_dim(samples.rows(), labels.size(), "samples vs labels");
    require_same_dim(samples.cols(), model.input_dim(), "sample dimension");
    for (std::size_t y : labels) {
        if (y >= model.output_dim()) throw Error(ErrorCode::InvalidArgument, "label out of range");
    }
    if (config.epochs == 0) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
    if (!(config.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be > 0");
    if (config.batch_size && *config.batch_size == 0) {
        throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
    }
}

struct AdamState {
    Gradients m;
    Gradients v;
    std::size_t step = 0;
};

void adam_update(std::span<double> params, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const TrainConfig& cfg, double bias1, double bias2) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grad[i];
        v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bias1;
        const double vhat = v[i] / bias2;
        params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
    }
}

}  // namespace

TrainResult train(MlpModel model, const Matrix& samples, std::span<const std::size_t> labels,
                  const TrainConfig& config) {
    model.validate();
    validate_training_inputs(model, samples, labels, config);
    const std::size_t n = samples.rows();
    const std::size_t batch = config.batch_size ? std::min(*config.batch_size, n) : n;

    SplitMix64 rng(config.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    AdamState adam{zero_gradients(model), zero_gradients(model), 0};
    TrainResult result;
    result.loss_history.reserve(config.epochs);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (batch < n) rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(start + batch, n);
            Gradients total = zero_gradients(model);
            for (std::size_t idx = start; idx < stop; ++idx) {
                const std::size_t i = order[idx];
                total.add_scaled(loss_gradients(model, samples.row(i), labels[i]), 1.0);
            }
            const double count = static_cast<double>(stop - start);
            epoch_loss += total.loss;
            if (!std::isfinite(total.loss)) {
                throw Error(ErrorCode::NonFiniteLoss, "loss became non-finite at epoch " + std::to_string(epoch));
            }
            const double inv = 1.0 / count;
            for (std::size_t k = 0; k < model.num_layers(); ++k) {
                for (double& gv : total.weights[k].values()) gv *= inv;
                for (double& gv : total.biases[k]) gv *= inv;
            }
            if (config.optimizer == Optimizer::Sgd) {
                for (std::size_t k = 0; k < model.num_layers(); ++k) {
                    axpy(-config.learning_rate, total.weights[k].values(), model.weights[k].values());
                    axpy(-config.learning_rate, total.biases[k], model.biases[k]);
                }
            } else {
                ++adam.step;
                const double bias1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(adam.step));
                const double bias2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(adam.step));
                for (std::size_t k = 0; k < model.num_layers(); ++k) {
                    adam_update(model.weights[k].values(), total.weights[k].values(), adam.m.weights[k].values(),
                                adam.v.weights[k].values(), config, bias1, bias2);
                    adam_update(model.biases[k], total.biases[k], adam.m.biases[k], adam.v.biases[k], config, bias1,
                                bias2);
                }
            }
        }
        result.loss_history.push_back(epoch_loss / static_cast<double>(n));
    }
    for (std::size_t k = 0; k < model.num_layers(); ++k) {
        require_finite(model.weights[k].values(), "trained weights");
    }
    result.train_accuracy = accuracy(model, samples, labels);
    model.metadata["optimizer"] = optimizer_name(config.optimizer);
    model.metadata["learning_rate"] = config.learning_rate;
    model.metadata["epochs"] = config.epochs;
    model.metadata["batch_size"] = config.batch_size ? nlohmann::json(*config.batch_size) : nlohmann::json("full");
    model.metadata["seed"] = config.seed;
    model.metadata["final_loss"] = result.loss_history.back();
    model.metadata["train_accuracy"] = result.train_accuracy;
    result.model = std::move(model);
    return result;
}

double accuracy(const MlpModel& model, const Matrix& samples, std::span<const std::size_t> labels) {
    require_same_dim(samples.rows(), labels.size(), "samples vs labels");
    if (samples.rows() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        if (predict_class(model, samples.row(i)) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.rows());
}

namespace {

std::vector<bool> relu_pattern(const MlpModel& model, std::span<const double> x) {
    std::vector<bool> pattern;
    Vector a(x.begin(), x.end());
    for (std::size_t k = 0; k + 1 < model.num_layers(); ++k) {
        a = apply_layer(model, k, a);
        for (double v : a) pattern.push_back(v > 0.0);
    }
    return pattern;
}

}  // namespace

GradientCheckResult gradient_check(const MlpModel& model, std::span<const double> x, std::size_t label, double eps) {
    const Gradients analytic = loss_gradients(model, x, label);
    GradientCheckResult result;
    MlpModel probe = model;

    auto check_param = [&](double& param, double grad) {
        const double original = param;
        param = original + eps;
        const double lp = cross_entropy(forward(probe, x), label);
        const auto pattern_plus = relu_pattern(probe, x);
        param = original - eps;
        const double lm = cross_entropy(forward(probe, x), label);
        const auto pattern_minus = relu_pattern(probe, x);
        param = original;
        if (pattern_plus != pattern_minus) {
            ++result.skipped_at_kink;
            return;
        }
        const double fd = (lp - lm) / (2.0 * eps);
        const double denom = std::max({std::abs(grad), std::abs(fd), 1e-6});
        result.max_relative_error = std::max(result.max_relative_error, std::abs(grad - fd) / denom);
        ++result.checked;
    };

    for (std::size_t k = 0; k < probe.num_layers(); ++k) {
        auto& w = probe.weights[k].values();
        for (std::size_t i = 0; i < w.size(); ++i) check_param(w[i], analytic.weights[k].values()[i]);
        auto& b = probe.biases[k];
        for (std::size_t i = 0; i < b.size(); ++i) check_param(b[i], analytic.biases[k][i]);
    }
    return result;
}

nlohmann::json model_to_json(const MlpModel& model) {
    nlohmann::json doc;
    doc["format"] = "rclarc-mlp";
    doc["version"] = 1;
    doc["layer_dims"] = model.layer_dims;
    doc["split_layer"] = model.split_layer;
    doc["activation"] = "relu";
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t k = 0; k < model.num_layers(); ++k) {
        layers.push_back({{"rows", model.weights[k].rows()},
                          {"cols", model.weights[k].cols()},
                          {"weights", model.weights[k].values()},
                          {"bias", model.biases[k]}});
    }
    doc["layers"] = std::move(layers);
    doc["metadata"] = model.metadata;
    return doc;
}

MlpModel model_from_json(const nlohmann::json& doc) {
    try {
        MlpModel model;
        model.layer_dims = doc.at("layer_dims").get<std::vector<std::size_t>>();
        model.split_layer = doc.at("split_layer").get<std::size_t>();
        for (const auto& layer : doc.at("layers")) {
            model.weights.emplace_back(layer.at("rows").get<std::size_t>(), layer.at("cols").get<std::size_t>(),
                                       layer.at("weights").get<std::vector<double>>());
            model.biases.push_back(layer.at("bias").get<Vector>());
        }
        if (doc.contains("metadata")) model.metadata = doc.at("metadata");
        model.validate();
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("malformed model document: ") + e.what());
    }
}

void save_model(const MlpModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out << model_to_json(model).dump(2) << '\n';
}

MlpModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, path + ": " + e.what());
    }
    return model_from_json(doc);
}

const char* optimizer_name(Optimizer optimizer) { return optimizer == Optimizer::Sgd ? "sgd" : "adam"; }

Optimizer optimizer_from_name(const std::string& name) {
    if (name == "sgd" || name == "SGD") return Optimizer::Sgd;
    if (name == "adam" || name == "Adam") return Optimizer::Adam;
    throw Error(ErrorCode::ConfigError, "unknown optimizer '" + name + "'");
}

}  // namespace rclarc
