#pragma once

#include "rclarc/attribution.hpp"
#include "rclarc/clarc.hpp"
#include "rclarc/concepts.hpp"
#include "rclarc/nn.hpp"
#include "rclarc/synthdata.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rclarc {

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct DatasetSpec {
    std::string kind = "shortcut";  // toy3d | backdoor | shortcut | external
    SynthConfig synth;
    std::string jsonl;     // external only
    std::string manifest;  // external only
};

struct ModelSpec {
    std::vector<std::size_t> hidden = {32};
    // Defaults to the last hidden layer.
    std::optional<std::size_t> split_layer;
};

struct CavSpec {
    CavMethod method = CavMethod::Pattern;
    // true: CAVs from generated clean/poisoned pairs; false: from dataset subsets.
    bool generated = true;
    std::size_t n_pairs = 500;
    SvmConfig svm;
};

struct OutputPaths {
    std::string dataset_jsonl;
    std::string dataset_manifest;
    std::string model;
    std::string cavs;
    std::string probes_dir;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSpec model;
    TrainConfig training;
    CavSpec cav;
    ProbeConfig probe;
    std::vector<std::string> modes = {"vanilla", "pclarc", "rclarc-class", "rclarc-artifact", "rclarc-both"};
    // Overrides the dataset's associated classes when present.
    std::optional<ClassMap> class_map;
    bool relevance = true;
    double lrp_epsilon = kDefaultLrpEpsilon;
    std::size_t histogram_clean_samples = 500;
    std::uint64_t seed = 0;
    // Upstream artifacts to reuse instead of recomputing (empty = recompute).
    OutputPaths inputs;

    // Throws ConfigError on unknown keys, wrong types or out-of-range values.
    static ExperimentConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
    // FNV-1a 64 over the canonical JSON dump, as 16 hex digits.
    std::string hash() const;
};

ExperimentConfig load_experiment_config(const std::string& path);
// Ready-made desk-scale configurations: "toy3d", "backdoor", "shortcut".
ExperimentConfig preset_config(const std::string& kind);

// Seeds of the individual stages, all derived from the master seed.
struct StageSeeds {
    std::uint64_t data, init, train, pairs, probes, holdout_pairs, histogram;
    explicit StageSeeds(std::uint64_t master);
};

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

LabeledDataset build_dataset(const ExperimentConfig& config);
TrainResult train_model(const ExperimentConfig& config, const LabeledDataset& data);

struct CavFit {
    std::vector<Cav> cavs;
    // Alignment with held-out generated pairs.
    std::map<std::string, AlignmentScore> alignment;
};

// One CAV per dataset concept at `layer`.
CavFit fit_cavs(const ExperimentConfig& config, const LabeledDataset& data, const MlpModel& model,
                std::size_t layer, CavMethod method);
// Recomputes the negatives' activations needed for intersection anchors.
CavBank make_bank(std::vector<Cav> cavs, const LabeledDataset& data, const MlpModel& model);
// Artifact probes on layer activations: positives carry the concept, negatives are
// all other training samples.
ProbeMap fit_probes(const ExperimentConfig& config, const LabeledDataset& data, const MlpModel& model,
                    std::size_t layer);
ClassMap resolve_class_map(const ExperimentConfig& config, const LabeledDataset& data);
// "vanilla" | "pclarc" | "rclarc-class" | "rclarc-artifact" | "rclarc-both"
CorrectionMode make_mode(const std::string& name, const ClassMap& class_map, const ProbeMap& probes);

std::size_t default_split_layer(const ModelSpec& spec);

struct Pipeline {
    ExperimentConfig config;
    LabeledDataset data;
    MlpModel model;
    CavBank bank;
    ProbeMap probes;
    ClassMap class_map;
    std::map<std::string, AlignmentScore> alignment;
    nlohmann::json training;  // summary of the training run (or of the loaded model)
};

enum class PipelineStage { Data, Model, Cavs, Probes };

// Runs (or loads from config.inputs) every stage up to and including `until`.
Pipeline build_pipeline(const ExperimentConfig& config, PipelineStage until);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalSet {
    std::vector<std::size_t> ids;
    Matrix samples;
    std::vector<std::size_t> labels;
    std::vector<std::vector<std::string>> flags;

    std::size_t size() const noexcept { return ids.size(); }
};

EvalSet make_eval_set(const LabeledDataset& data, const std::vector<std::size_t>& ids);
// Test-split samples without / with artifacts.
EvalSet clean_test_set(const LabeledDataset& data);
EvalSet artifact_test_set(const LabeledDataset& data);

struct EvalOptions {
    bool relevance = true;
    double lrp_epsilon = kDefaultLrpEpsilon;
};

struct ModeMetrics {
    std::string mode;
    double accuracy_clean = 0.0;
    double accuracy_artifact = 0.0;
    double f1_clean = 0.0;
    double f1_artifact = 0.0;
    std::optional<double> mean_relevance_share;
    std::size_t n_clean = 0;
    std::size_t n_artifact = 0;
    std::size_t corrected_clean = 0;     // samples whose correction set was nonempty
    std::size_t corrected_artifact = 0;

    nlohmann::json to_json() const;
};

// Accuracy and macro-F1 on the clean and artifact sets separately; relevance
// share (LRP-epsilon w.r.t. the mode's own prediction) averaged over artifact
// samples using each sample's own masks. Throws EmptyTestSet if either set is
// empty and InvalidArgument if they share a sample.
ModeMetrics evaluate(const MlpModel& model, const CorrectionMode& mode, const CavBank* bank, const EvalSet& clean,
                     const EvalSet& artifact, const std::map<std::string, ArtifactMask>& masks,
                     const EvalOptions& options);

struct EvalReport {
    std::vector<ModeMetrics> rows;
    nlohmann::json metadata = nlohmann::json::object();

    nlohmann::json to_json() const;
    const ModeMetrics& row(const std::string& mode) const;
};

EvalReport evaluate_pipeline(const Pipeline& pipeline, const std::vector<std::string>& modes);

// ---------------------------------------------------------------------------
// Toy 3D experiment
// ---------------------------------------------------------------------------

struct Toy3dOptions {
    std::size_t epochs = 5000;
    double learning_rate = 0.01;
    std::size_t hidden = 30;
};

struct Toy3dModeResult {
    std::string mode;
    double accuracy_all = 0.0;   // over all 2000 points
    double accuracy_test = 0.0;  // over the held-out 20%
    std::size_t class2_total = 0;
    std::size_t class2_misclassified = 0;
    std::size_t moved = 0;  // points the transformation changed
    Matrix points;          // transformed inputs
    std::vector<std::size_t> predictions;
};

struct Toy3dResult {
    LabeledDataset data;
    MlpModel model;
    CavBank bank;
    ProbeMap probes;
    ClassMap class_map;
    double vanilla_test_accuracy = 0.0;
    std::vector<Toy3dModeResult> modes;  // vanilla, pclarc, rclarc-class, rclarc-artifact, rclarc-both

    const Toy3dModeResult& mode(const std::string& name) const;
    nlohmann::json to_json() const;
    void write_points_csv(const std::string& path) const;
};

// Trains the 3-30-2 network with full-batch Adam, fits pattern CAVs (negatives:
// clean Class-1 samples) and input-space probes, and applies each mode directly
// to the inputs.
Toy3dResult run_toy3d(std::uint64_t seed, const Toy3dOptions& options = {});

// ---------------------------------------------------------------------------
// Sweep and histogram exports
// ---------------------------------------------------------------------------

struct SweepRow {
    std::size_t k = 0;
    std::string mode;
    double accuracy_clean = 0.0;
    double f1_clean = 0.0;
    double accuracy_artifact = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<std::string> concept_order;

    double accuracy(std::size_t k, const std::string& mode) const;
    nlohmann::json to_json() const;
    void write_csv(std::ostream& out) const;
};

// For k = 0..K suppresses the first k bank concepts (k = 0 is vanilla for every mode).
SweepResult sweep_n_artifacts(const Pipeline& pipeline, const std::vector<std::string>& modes);

struct HistogramRow {
    std::string concept_id;
    std::size_t sample_id = 0;
    std::string group;  // "clean" or "artifact"
    std::size_t label = 0;
    double activation = 0.0;
};

// CAV activations of `clean_samples` randomly chosen clean non-test samples and
// all non-test samples carrying the CAV's artifact.
std::vector<HistogramRow> export_histograms(std::span<const Cav> cavs, const LabeledDataset& data,
                                            const MlpModel& model, std::size_t clean_samples, std::uint64_t seed);
void write_histogram_csv(std::ostream& out, const std::vector<HistogramRow>& rows);

// Cosine of every CAV with each class's clean mean direction (relative to the global clean mean).
CosineTable class_cosines(std::span<const Cav> cavs, const LabeledDataset& data, const MlpModel& model);
void write_cosine_csv(std::ostream& out, std::span<const Cav> cavs, const CosineTable& table);

}  // namespace rclarc
