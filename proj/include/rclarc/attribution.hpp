#pragma once

#include "rclarc/clarc.hpp"
#include "rclarc/core_math.hpp"
#include "rclarc/nn.hpp"

#include <iosfwd>
#include <set>
#include <span>
#include <string>

namespace rclarc {

enum class RelevanceMethod { LrpEpsilon, GradientTimesInput };

const char* relevance_method_name(RelevanceMethod method);

struct RelevanceMap {
    Vector values;  // one entry per input coordinate
    std::size_t target_label = 0;
    RelevanceMethod method = RelevanceMethod::LrpEpsilon;
};

// Input coordinates touched by one artifact.
struct ArtifactMask {
    std::set<std::size_t> indices;

    bool operator==(const ArtifactMask&) const = default;
};

// Relative stabilizer: each layer uses eps * mean|z| over that layer's pre-activations.
inline constexpr double kDefaultLrpEpsilon = 1e-6;

// LRP-epsilon for dense layers, seeded with the target logit. When the mode
// applies a correction to this sample, p = (I - P) a + P z is propagated as one
// more linear layer. ReLUs pass relevance through unchanged.
RelevanceMap lrp_epsilon(const MlpModel& model, std::span<const double> x, std::size_t target_label, double epsilon,
                         const CorrectionMode& mode, const CavBank* bank);

// x * d(logit_target)/dx through the (possibly corrected) forward path; the
// condition's choice of concepts is held fixed.
RelevanceMap gradient_x_input(const MlpModel& model, std::span<const double> x, std::size_t target_label,
                              const CorrectionMode& mode, const CavBank* bank);

// sum_{i in mask} |R_i| / sum_i |R_i|. Throws ZeroRelevance if the map is all zero.
double relevance_share(const RelevanceMap& rmap, const ArtifactMask& mask);

// Divides by the maximum absolute value (all-zero maps are returned unchanged).
Vector normalize_for_export(std::span<const double> relevance);

// Writes "sample_id,coordinate,relevance" rows (header included when requested).
void write_relevance_csv(std::ostream& out, std::size_t sample_id, const RelevanceMap& rmap, bool header);

}  // namespace rclarc
