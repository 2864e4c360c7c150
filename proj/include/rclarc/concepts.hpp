#pragma once

#include "rclarc/core_math.hpp"
#include "rclarc/svm.hpp"

#include <json.hpp>

#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rclarc {

enum class CavMethod { Pattern, Filter };

const char* cav_method_name(CavMethod method);
CavMethod cav_method_from_name(const std::string& name);

// An artifact concept: which samples carry it, which do not, and which output
// labels it is associated with.
struct ConceptDef {
    std::string id;
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    std::set<std::size_t> associated_classes;

    // Throws InvalidArgument if the sample sets are empty or overlap, or a class
    // index is >= num_classes.
    void validate(std::size_t num_classes) const;
};

// Unit direction for one concept at one layer, anchored at the mean activation
// of the concept's negatives.
struct Cav {
    std::string concept_id;
    std::size_t layer = 0;
    Vector direction;
    CavMethod method = CavMethod::Pattern;
    Vector z_neg;
    // Sample ids of the negatives z_neg was computed from. Needed to form the
    // intersection anchor when several concepts are suppressed together.
    std::vector<std::size_t> negative_ids;
    nlohmann::json provenance = nlohmann::json::object();

    std::size_t dim() const noexcept { return direction.size(); }
    bool operator==(const Cav&) const = default;
};

struct PairedSet {
    // (clean activation, poisoned activation)
    std::vector<std::pair<Vector, Vector>> pairs;
    // Dataset index of the clean sample behind each pair.
    std::vector<std::size_t> clean_ids;

    std::size_t size() const noexcept { return pairs.size(); }
    bool empty() const noexcept { return pairs.empty(); }
};

// direction = normalize(mean(A+) - mean(A-)), z_neg = mean(A-).
// Throws DegenerateConcept if the mean gap is below 1e-12.
Cav pattern_cav(std::span<const Vector> positives, std::span<const Vector> negatives);

// direction = normalize(w) of a class-balanced squared-hinge linear SVM that
// separates positives (+1) from negatives (-1). The solver outcome is recorded
// in provenance ("solver_converged", "solver_iterations", "solver_objective").
Cav filter_cav(std::span<const Vector> positives, std::span<const Vector> negatives, const SvmConfig& config);

struct AlignmentScore {
    double score = 0.0;
    std::size_t used = 0;
    std::size_t skipped = 0;  // pairs with zero activation difference
};

// Mean cosine between the CAV and (poisoned - clean) over all non-degenerate pairs.
// Throws InvalidArgument on an empty set and DegenerateConcept if every pair is degenerate.
AlignmentScore alignment_score(const Cav& cav, const PairedSet& pairs);

// <v, a - z_neg>
double cav_activation(const Cav& cav, std::span<const double> activation);

struct CosineTable {
    Matrix values;              // cavs x classes; 0 where missing
    std::vector<bool> missing;  // row-major flags for degenerate class directions
    bool is_missing(std::size_t cav, std::size_t cls) const { return missing[cav * values.cols() + cls]; }
};

// Entry (i, d) = cos(v_i, class_means[d] - global_mean).
CosineTable class_direction_cosines(std::span<const Cav> cavs, std::span<const Vector> class_means,
                                    std::span<const double> global_mean);

nlohmann::json cav_to_json(const Cav& cav);
Cav cav_from_json(const nlohmann::json& doc);
// A CAV bank file is a JSON array of Cav records.
void save_cavs(std::span<const Cav> cavs, const std::string& path);
std::vector<Cav> load_cavs(const std::string& path);

}  // namespace rclarc
