#include "rclarc/attribution.hpp"
#include "rclarc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace rclarc {

const char* relevance_method_name(RelevanceMethod method) {
    return method == RelevanceMethod::LrpEpsilon ? "lrp_eps" : "grad_x_input";
}

namespace {

struct Stage {
    const Matrix* weight;
    Vector bias;
    bool relu;
};

struct StagePlan {
    std::vector<Stage> stages;
    Matrix correction_linear;  // owns the (I - P) matrix when a correction is applied
};

// Dense layers of the model, with the sample's correction (if any) spliced in
// as an affine stage in front of the dense layer that consumes its activation.
StagePlan build_stages(const MlpModel& model, std::span<const double> x, const CorrectionMode& mode,
                       const CavBank* bank) {
    StagePlan plan;
    std::shared_ptr<const AffineCorrection> correction;
    if (mode.kind != CorrectionMode::Kind::Vanilla) {
        const CorrectedOutput out = corrected_forward_detailed(model, x, mode, bank);
        if (!out.applied.empty()) correction = bank->correction(out.applied);
    }
    if (correction) plan.correction_linear = correction->linear_part();
    plan.stages.reserve(model.num_layers() + 1);
    for (std::size_t k = 0; k < model.num_layers(); ++k) {
        if (correction && bank->layer() == k) {
            plan.stages.push_back({&plan.correction_linear, correction->offset(), false});
        }
        plan.stages.push_back({&model.weights[k], model.biases[k], k + 1 < model.num_layers()});
    }
    return plan;
}

void check_target(const MlpModel& model, std::span<const double> x, std::size_t target) {
    require_same_dim(x.size(), model.input_dim(), "attribution input");
    if (target >= model.output_dim()) throw Error(ErrorCode::InvalidArgument, "target label out of range");
}

}  // namespace

RelevanceMap lrp_epsilon(const MlpModel& model, std::span<const double> x, std::size_t target_label, double epsilon,
                         const CorrectionMode& mode, const CavBank* bank) {
    check_target(model, x, target_label);
    if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "LRP epsilon must be > 0");
    const StagePlan plan = build_stages(model, x, mode, bank);
    const auto& stages = plan.stages;

    std::vector<Vector> inputs;  // input of each stage
    std::vector<Vector> pre;     // pre-activation of each stage
    Vector a(x.begin(), x.end());
    for (const auto& s : stages) {
        inputs.push_back(a);
        Vector z = matvec(*s.weight, a);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += s.bias[i];
        pre.push_back(z);
        if (s.relu) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;
        }
        a = std::move(z);
    }

    Vector relevance(a.size(), 0.0);
    relevance[target_label] = a[target_label];
    for (std::size_t si = stages.size(); si-- > 0;) {
        const Matrix& w = *stages[si].weight;
        const Vector& in = inputs[si];
        const Vector& z = pre[si];
        double mean_abs = 0.0;
        for (double v : z) mean_abs += std::abs(v);
        mean_abs /= static_cast<double>(z.size());
        const double eps = epsilon * (mean_abs > 0.0 ? mean_abs : 1.0);
        Vector ratio(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) {
            const double denom = z[k] + (z[k] >= 0.0 ? eps : -eps);
            ratio[k] = relevance[k] / denom;
        }
        Vector back = matvec_transposed(w, ratio);
        for (std::size_t j = 0; j < back.size(); ++j) back[j] *= in[j];
        relevance = std::move(back);
    }
    return {std::move(relevance), target_label, RelevanceMethod::LrpEpsilon};
}

RelevanceMap gradient_x_input(const MlpModel& model, std::span<const double> x, std::size_t target_label,
                              const CorrectionMode& mode, const CavBank* bank) {
    check_target(model, x, target_label);
    const StagePlan plan = build_stages(model, x, mode, bank);
    const auto& stages = plan.stages;

    std::vector<Vector> pre;
    Vector a(x.begin(), x.end());
    for (const auto& s : stages) {
        Vector z = matvec(*s.weight, a);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += s.bias[i];
        pre.push_back(z);
        if (s.relu) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;
        }
        a = std::move(z);
    }
    Vector grad(a.size(), 0.0);
    grad[target_label] = 1.0;
    for (std::size_t si = stages.size(); si-- > 0;) {
        if (stages[si].relu) {
            for (std::size_t k = 0; k < grad.size(); ++k) {
                if (!(pre[si][k] > 0.0)) grad[k] = 0.0;
            }
        }
        grad = matvec_transposed(*stages[si].weight, grad);
    }
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= x[i];
    return {std::move(grad), target_label, RelevanceMethod::GradientTimesInput};
}

double relevance_share(const RelevanceMap& rmap, const ArtifactMask& mask) {
    double total = 0.0;
    for (double r : rmap.values) total += std::abs(r);
    if (!(total > 0.0)) throw Error(ErrorCode::ZeroRelevance, "relevance map has no mass");
    double inside = 0.0;
    for (std::size_t i : mask.indices) {
        if (i >= rmap.values.size()) throw Error(ErrorCode::InvalidArgument, "mask index outside the input");
        inside += std::abs(rmap.values[i]);
    }
    return std::clamp(inside / total, 0.0, 1.0);
}

Vector normalize_for_export(std::span<const double> relevance) {
    double mx = 0.0;
    for (double r : relevance) mx = std::max(mx, std::abs(r));
    Vector out(relevance.begin(), relevance.end());
    if (mx > 0.0) {
        for (double& r : out) r /= mx;
    }
    return out;
}

void write_relevance_csv(std::ostream& out, std::size_t sample_id, const RelevanceMap& rmap, bool header) {
    if (header) out << "sample_id,coordinate,relevance\n";
    const auto old_precision = out.precision(17);
    for (std::size_t i = 0; i < rmap.values.size(); ++i) out << sample_id << ',' << i << ',' << rmap.values[i] << '\n';
    out.precision(old_precision);
}

}  // namespace rclarc
