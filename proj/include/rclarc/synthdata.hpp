#pragma once

#include "rclarc/attribution.hpp"
#include "rclarc/concepts.hpp"
#include "rclarc/core_math.hpp"
#include "rclarc/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace rclarc {

enum class Split { Train, Val, Test };

const char* split_name(Split split);
Split split_from_name(const std::string& name);

// How an artifact enters a sample: added on top of the mask coordinates, or
// written over them (slot-style artifacts that displace a background object).
enum class Insertion { Additive, Replace };

struct LabeledDataset {
    std::string kind;
    std::size_t n_classes = 0;
    Matrix samples;  // n x input_dim
    std::vector<std::size_t> labels;
    std::vector<std::vector<std::string>> artifact_flags;  // sorted concept ids per sample
    std::vector<Split> splits;
    std::map<std::string, ArtifactMask> masks;
    // Full-length input vector of the artifact, zero outside its mask.
    std::map<std::string, Vector> artifact_patterns;
    Insertion insertion = Insertion::Additive;
    // Output labels each artifact is spuriously tied to (R_c).
    std::map<std::string, std::set<std::size_t>> associated_classes;
    nlohmann::json manifest = nlohmann::json::object();

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t input_dim() const noexcept { return samples.cols(); }
    bool has_flag(std::size_t i, const std::string& concept_id) const;
    bool is_clean(std::size_t i) const { return artifact_flags[i].empty(); }
    std::vector<std::string> concept_ids() const;

    std::vector<std::size_t> select(const std::function<bool(std::size_t)>& keep) const;
    std::vector<std::size_t> indices(Split split) const;
    // Returns the sample with the artifact inserted according to `insertion`.
    Vector with_artifact(std::span<const double> x, const std::string& concept_id) const;

    // Throws InvalidArgument if labels, flags, splits or masks are inconsistent.
    void validate() const;
};

struct SynthConfig {
    std::size_t n_classes = 2;
    std::size_t input_dim = 20;
    std::size_t samples_per_class = 500;
    std::size_t artifact_count = 1;
    double artifact_magnitude = 4.0;  // delta
    double poison_fraction = 0.33;
    // Fraction of poisoned samples whose label is flipped to the target class.
    double label_flip_fraction = 1.0;
    std::size_t flip_target = 1;
    std::size_t mask_width = 4;  // coordinates per artifact
    double class_separation = 4.0;
    double noise_std = 1.0;
    // The first `similar_classes` classes share a base mean and differ by
    // `similar_separation` only (hard-to-separate classes invite shortcuts).
    std::size_t similar_classes = 0;
    double similar_separation = 1.0;
    // Magnitude of neutral background objects in artifact slots (shortcut only).
    double background_magnitude = 0.0;
    double val_fraction = 0.1;
    std::size_t test_per_class = 100;
    std::uint64_t seed = 0;

    // Throws ConfigError on out-of-range fractions or non-positive sizes.
    void validate() const;
};

nlohmann::json synth_config_to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& doc);

// Four groups of 500: Class-1 clean N((0,8,0), I) and the two Class-1 artifact
// groups N((1,8,8), I), N((1,1,8), I) get label 0; Class-2 N((6,1,1), 1.8 I)
// gets label 1. 80% of each group is tagged train, 20% test.
LabeledDataset gen_toy3d(std::uint64_t seed);

// Two Gaussian classes; a fixed artifact delta*u on the last mask_width
// coordinates is added to poison_fraction of the class-0 training samples,
// label_flip_fraction of which are relabelled flip_target. The test split holds
// clean correctly-labelled samples plus an artifact-bearing copy of each.
LabeledDataset gen_backdoor(const SynthConfig& config);

// n_classes Gaussian clusters and artifact_count slot artifacts on disjoint
// coordinate blocks. Every sample carries one object per slot: a neutral
// background object, or for poisoned samples the artifact itself. Half of the
// class-0 training samples (poison_fraction) receive a uniform 1..artifact_count
// random subset of artifacts. The test split holds clean samples plus an
// artifact-bearing copy of each with its own random subset.
LabeledDataset gen_shortcut(const SynthConfig& config);

struct InputPairs {
    std::vector<std::size_t> clean_ids;
    std::vector<Vector> clean;
    std::vector<Vector> poisoned;
};

// Draws n_pairs clean training samples (seeded, independent of the concept so
// that all concepts share the same clean pool) and inserts the concept.
// Throws ConceptUnknown / InvalidArgument (n_pairs == 0 or no clean samples).
InputPairs gen_paired_inputs(const LabeledDataset& data, const std::string& concept_id, std::size_t n_pairs,
                             std::uint64_t seed);
// The same pairs pushed through the model to the given layer.
PairedSet gen_paired(const LabeledDataset& data, const std::string& concept_id, std::size_t n_pairs,
                     std::uint64_t seed, const MlpModel& model, std::size_t layer);
PairedSet to_latent_pairs(const InputPairs& pairs, const MlpModel& model, std::size_t layer);

// JSON-lines: one {"id","features","label","artifacts","split"} record per
// sample. The manifest carries everything else.
void save_dataset(const LabeledDataset& data, const std::string& jsonl_path, const std::string& manifest_path);
LabeledDataset load_dataset(const std::string& jsonl_path, const std::string& manifest_path);
void write_dataset_csv(const LabeledDataset& data, const std::string& path);

}  // namespace rclarc
