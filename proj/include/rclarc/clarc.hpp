#pragma once

#include "rclarc/concepts.hpp"
#include "rclarc/core_math.hpp"
#include "rclarc/nn.hpp"
#include "rclarc/svm.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace rclarc {

using ConceptSet = std::set<std::string>;
// Layer activations of negative samples, keyed by dataset sample id.
using ActivationTable = std::map<std::size_t, Vector>;

struct NegativeSet {
    std::string concept_id;
    std::vector<std::size_t> sample_ids;
};

// Mean activation over the samples that are negatives of every listed concept.
// Throws EmptyIntersection naming the concepts when no sample is shared, and
// ConceptUnknown if an id in the intersection has no activation.
Vector mean_of_intersection(std::span<const NegativeSet> sets, const ActivationTable& activations);

// The affine map a -> a - P (a - z), P the orthogonal projector onto span(V).
struct AffineCorrection {
    ConceptSet concepts;
    Matrix projector;  // P, m x m
    Vector anchor;     // z
    bool regularized = false;

    Vector apply(std::span<const double> a) const;
    // I - P
    Matrix linear_part() const;
    // P z
    Vector offset() const;
};

// A set of CAVs at one layer plus the negative activations required to build
// intersection anchors. Immutable after construction; safe to share across threads.
class CavBank {
public:
    CavBank() = default;
    explicit CavBank(std::vector<Cav> cavs, ActivationTable negative_activations = {});

    std::size_t layer() const noexcept { return layer_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return cavs_.size(); }
    bool empty() const noexcept { return cavs_.empty(); }
    const std::vector<Cav>& cavs() const noexcept { return cavs_; }
    const ActivationTable& negative_activations() const noexcept { return negatives_; }

    bool contains(const std::string& id) const;
    const Cav& cav(const std::string& id) const;
    ConceptSet all_concepts() const;
    // Bank restricted to the given concepts (bank order preserved).
    CavBank subset(const ConceptSet& concepts) const;

    // z-_{C'}: the concept's own z_neg for a singleton, otherwise the mean over
    // the intersection of the concepts' negative sample ids.
    Vector anchor(const ConceptSet& concepts) const;
    // Cached per subset.
    std::shared_ptr<const AffineCorrection> correction(const ConceptSet& concepts) const;

private:
    void check_subset(const ConceptSet& concepts) const;

    std::vector<Cav> cavs_;
    ActivationTable negatives_;
    std::size_t layer_ = 0;
    std::size_t dim_ = 0;

    struct Cache {
        std::mutex mutex;
        std::map<ConceptSet, std::shared_ptr<const AffineCorrection>> entries;
    };
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

// a - v v^T (a - z_neg)
Vector pclarc_apply(std::span<const double> a, const Cav& cav);
// a - V (V^T V)^{-1} V^T (a - z-_{C'}); identity when the subset is empty.
Vector multi_pclarc_apply(std::span<const double> a, const CavBank& bank, const ConceptSet& concepts);

// Binary artifact detector on latent activations: fires when w.a + b > 0.
struct LinearProbe {
    std::string concept_id;
    Vector weight;
    double bias = 0.0;
    double holdout_accuracy = 0.0;
    std::uint64_t seed = 0;
    bool converged = true;

    double score(std::span<const double> a) const;
    bool fires(std::span<const double> a) const { return score(a) > 0.0; }
};

using ClassMap = std::map<std::string, std::set<std::size_t>>;
using ProbeMap = std::map<std::string, LinearProbe>;

// {c : predicted in R_c}
ConceptSet class_condition(std::size_t predicted_label, const ClassMap& class_map);
// {c : probe_c fires on a}
ConceptSet artifact_condition(std::span<const double> a, const ProbeMap& probes);
// Intersection of the two.
ConceptSet combined_condition(std::span<const double> a, std::size_t predicted_label, const ClassMap& class_map,
                              const ProbeMap& probes);

enum class ConditionKind { Always, Class, Artifact, Both };

const char* condition_kind_name(ConditionKind kind);
ConditionKind condition_kind_from_name(const std::string& name);

struct ConditionFn {
    ConditionKind kind = ConditionKind::Always;
    ClassMap class_map;
    ProbeMap probes;

    // Throws ConfigError when the class map or probes do not cover every bank concept.
    void validate(const CavBank& bank) const;
    // Subset to suppress for an activation whose uncorrected prediction is given.
    ConceptSet evaluate(std::span<const double> a, std::size_t predicted_label, const CavBank& bank) const;
};

struct CorrectionMode {
    enum class Kind { Vanilla, PClArC, RClArC };
    Kind kind = Kind::Vanilla;
    ConditionFn condition;

    static CorrectionMode vanilla() { return {Kind::Vanilla, {}}; }
    static CorrectionMode pclarc() { return {Kind::PClArC, {}}; }
    static CorrectionMode rclarc(ConditionFn condition) { return {Kind::RClArC, std::move(condition)}; }

    // "vanilla", "pclarc", "rclarc-class", "rclarc-artifact", "rclarc-both"
    std::string name() const;
};

struct CorrectedOutput {
    Vector logits;
    ConceptSet applied;
    std::size_t uncorrected_prediction = 0;
};

// Corrected inference. The bank's layer must be the model's split layer, or 0
// for correction applied directly to the inputs. For R-ClArC the condition is
// evaluated on the uncorrected activation and uncorrected prediction; when it
// yields no concepts the logits are exactly the vanilla logits.
CorrectedOutput corrected_forward_detailed(const MlpModel& model, std::span<const double> x,
                                           const CorrectionMode& mode, const CavBank* bank);
Vector corrected_forward(const MlpModel& model, std::span<const double> x, const CorrectionMode& mode,
                         const CavBank* bank);
// The activation the head receives (after correction) at the bank's layer.
Vector corrected_activation(const MlpModel& model, std::span<const double> x, const CorrectionMode& mode,
                            const CavBank& bank);

struct ProbeConfig {
    SvmConfig svm;
    double holdout_fraction = 0.2;
    // Negatives are subsampled so that |negatives| <= max_negative_ratio * |positives|.
    double max_negative_ratio = 5.0;
    std::uint64_t seed = 0;
};

// Seeded subsample, stratified 80/20 split, class-balanced squared-hinge SVM,
// holdout accuracy on the held-out 20%.
LinearProbe train_artifact_probe(std::span<const Vector> positives, std::span<const Vector> negatives,
                                 const ProbeConfig& config);

nlohmann::json probe_to_json(const LinearProbe& probe);
LinearProbe probe_from_json(const nlohmann::json& doc);
void save_probe(const LinearProbe& probe, const std::string& path);
LinearProbe load_probe(const std::string& path);

}  // namespace rclarc
