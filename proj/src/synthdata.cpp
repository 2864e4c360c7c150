#include "rclarc/synthdata.hpp"
#include "rclarc/errors.hpp"
#include "rclarc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rclarc {

const char* split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw Error(ErrorCode::ConfigError, "unknown split '" + name + "'");
}

bool LabeledDataset::has_flag(std::size_t i, const std::string& concept_id) const {
    const auto& flags = artifact_flags[i];
    return std::binary_search(flags.begin(), flags.end(), concept_id);
}

std::vector<std::string> LabeledDataset::concept_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, mask] : masks) ids.push_back(id);
    return ids;
}

std::vector<std::size_t> LabeledDataset::select(const std::function<bool(std::size_t)>& keep) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (keep(i)) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> LabeledDataset::indices(Split split) const {
    return select([&](std::size_t i) { return splits[i] == split; });
}

Vector LabeledDataset::with_artifact(std::span<const double> x, const std::string& concept_id) const {
    const auto pattern = artifact_patterns.find(concept_id);
    const auto mask = masks.find(concept_id);
    if (pattern == artifact_patterns.end() || mask == masks.end()) {
        throw Error(ErrorCode::ConceptUnknown, "dataset has no artifact '" + concept_id + "'");
    }
    require_same_dim(x.size(), pattern->second.size(), "sample");
    Vector out(x.begin(), x.end());
    if (insertion == Insertion::Additive) {
        for (std::size_t i : mask->second.indices) out[i] += pattern->second[i];
    } else {
        for (std::size_t i : mask->second.indices) out[i] = pattern->second[i];
    }
    return out;
}

void LabeledDataset::validate() const {
    const std::size_t n = samples.rows();
    if (labels.size() != n || artifact_flags.size() != n || splits.size() != n) {
        throw Error(ErrorCode::InvalidArgument, "dataset columns have inconsistent lengths");
    }
    for (std::size_t y : labels) {
        if (y >= n_classes) throw Error(ErrorCode::InvalidArgument, "label out of range");
    }
    for (const auto& flags : artifact_flags) {
        for (const auto& f : flags) {
            if (!masks.count(f)) throw Error(ErrorCode::InvalidArgument, "flag references unknown concept '" + f + "'");
        }
    }
    for (const auto& [id, mask] : masks) {
        for (std::size_t i : mask.indices) {
            if (i >= input_dim()) throw Error(ErrorCode::InvalidArgument, "mask of '" + id + "' exceeds input");
        }
    }
}

void SynthConfig::validate() const {
    auto fraction = [](double f, const char* name) {
        if (!(f >= 0.0 && f <= 1.0)) throw Error(ErrorCode::ConfigError, std::string(name) + " must lie in [0, 1]");
    };
    fraction(poison_fraction, "poison_fraction");
    fraction(label_flip_fraction, "label_flip_fraction");
    fraction(val_fraction, "val_fraction");
    if (n_classes < 2) throw Error(ErrorCode::ConfigError, "need at least two classes");
    if (samples_per_class == 0) throw Error(ErrorCode::ConfigError, "samples_per_class must be positive");
    if (!(artifact_magnitude > 0.0)) throw Error(ErrorCode::ConfigError, "artifact_magnitude must be > 0");
    if (!(noise_std >= 0.0) || !(class_separation >= 0.0) || !(background_magnitude >= 0.0)) {
        throw Error(ErrorCode::ConfigError, "scales must be non-negative");
    }
    if (mask_width == 0) throw Error(ErrorCode::ConfigError, "mask_width must be positive");
    if (similar_classes > n_classes) throw Error(ErrorCode::ConfigError, "similar_classes exceeds n_classes");
    if (flip_target >= n_classes) throw Error(ErrorCode::ConfigError, "flip_target out of range");
}

nlohmann::json synth_config_to_json(const SynthConfig& c) {
    return {{"n_classes", c.n_classes},
            {"input_dim", c.input_dim},
            {"samples_per_class", c.samples_per_class},
            {"artifact_count", c.artifact_count},
            {"artifact_magnitude", c.artifact_magnitude},
            {"poison_fraction", c.poison_fraction},
            {"label_flip_fraction", c.label_flip_fraction},
            {"flip_target", c.flip_target},
            {"mask_width", c.mask_width},
            {"class_separation", c.class_separation},
            {"noise_std", c.noise_std},
            {"similar_classes", c.similar_classes},
            {"similar_separation", c.similar_separation},
            {"background_magnitude", c.background_magnitude},
            {"val_fraction", c.val_fraction},
            {"test_per_class", c.test_per_class},
            {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& doc) {
    SynthConfig c;
    try {
        c.n_classes = doc.value("n_classes", c.n_classes);
        c.input_dim = doc.value("input_dim", c.input_dim);
        c.samples_per_class = doc.value("samples_per_class", c.samples_per_class);
        c.artifact_count = doc.value("artifact_count", c.artifact_count);
        c.artifact_magnitude = doc.value("artifact_magnitude", c.artifact_magnitude);
        c.poison_fraction = doc.value("poison_fraction", c.poison_fraction);
        c.label_flip_fraction = doc.value("label_flip_fraction", c.label_flip_fraction);
        c.flip_target = doc.value("flip_target", c.flip_target);
        c.mask_width = doc.value("mask_width", c.mask_width);
        c.class_separation = doc.value("class_separation", c.class_separation);
        c.noise_std = doc.value("noise_std", c.noise_std);
        c.similar_classes = doc.value("similar_classes", c.similar_classes);
        c.similar_separation = doc.value("similar_separation", c.similar_separation);
        c.background_magnitude = doc.value("background_magnitude", c.background_magnitude);
        c.val_fraction = doc.value("val_fraction", c.val_fraction);
        c.test_per_class = doc.value("test_per_class", c.test_per_class);
        c.seed = doc.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("bad synthetic data config: ") + e.what());
    }
    return c;
}

namespace {

// Independent streams so that e.g. the clean counterfactual of a poisoned
// dataset is reproduced exactly by the same seed with poison_fraction = 0.
enum Stream : std::uint64_t { kMeans = 1, kSamples = 2, kPoison = 3, kBackground = 4, kSplits = 5, kPatterns = 6 };

struct Builder {
    LabeledDataset data;
    std::vector<double> values;
    std::size_t dim = 0;

    std::size_t push(const Vector& x, std::size_t label, Split split, std::vector<std::string> flags = {}) {
        values.insert(values.end(), x.begin(), x.end());
        data.labels.push_back(label);
        data.splits.push_back(split);
        std::sort(flags.begin(), flags.end());
        data.artifact_flags.push_back(std::move(flags));
        return data.labels.size() - 1;
    }

    LabeledDataset finish() {
        data.samples = Matrix(data.labels.size(), dim, std::move(values));
        data.validate();
        return std::move(data);
    }
};

Vector random_unit(SplitMix64& rng, std::size_t dim) {
    Vector v(dim);
    double n = 0.0;
    while (n == 0.0) {
        for (double& x : v) x = rng.normal();
        n = norm(v);
    }
    for (double& x : v) x /= n;
    return v;
}

// Class means on the first `features` coordinates.
std::vector<Vector> class_means(const SynthConfig& c, std::size_t features, SplitMix64& rng) {
    std::vector<Vector> means;
    if (c.n_classes == 2 && c.similar_classes == 0) {
        const Vector e = random_unit(rng, features);
        means.push_back(scaled(e, -0.5 * c.class_separation));
        means.push_back(scaled(e, 0.5 * c.class_separation));
        return means;
    }
    // Random unit directions are nearly orthogonal, so pairwise distances are ~ separation.
    const double spread = c.class_separation / std::sqrt(2.0);
    const double similar_spread = c.similar_separation / std::sqrt(2.0);
    Vector group_base;
    for (std::size_t d = 0; d < c.n_classes; ++d) {
        if (d < c.similar_classes) {
            if (group_base.empty()) group_base = scaled(random_unit(rng, features), spread);
            Vector m = group_base;
            axpy(similar_spread, random_unit(rng, features), m);
            means.push_back(std::move(m));
        } else {
            means.push_back(scaled(random_unit(rng, features), spread));
        }
    }
    return means;
}

// Marks round(val_fraction * |class pool|) samples of each class as validation.
void assign_validation(LabeledDataset& data, std::size_t n_classes, double val_fraction, SplitMix64& rng) {
    for (std::size_t d = 0; d < n_classes; ++d) {
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data.splits[i] == Split::Train && data.labels[i] == d) pool.push_back(i);
        }
        rng.shuffle(pool);
        const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(pool.size())));
        for (std::size_t j = 0; j < n_val; ++j) data.splits[pool[j]] = Split::Val;
    }
}

// Zero-padded so that lexicographic order matches index order.
std::string artifact_name(std::size_t index, std::size_t count) {
    if (count == 1) return "artifact";
    const std::size_t width = std::to_string(count - 1).size();
    std::string digits = std::to_string(index);
    return "artifact_" + std::string(width - digits.size(), '0') + digits;
}

}  // namespace

LabeledDataset gen_toy3d(std::uint64_t seed) {
    struct Group {
        Vector mean;
        double stddev;
        std::size_t label;
        const char* flag;
    };
    const std::vector<Group> groups = {
        {{0.0, 8.0, 0.0}, 1.0, 0, nullptr},
        {{1.0, 8.0, 8.0}, 1.0, 0, "artifact_1"},
        {{1.0, 1.0, 8.0}, 1.0, 0, "artifact_2"},
        {{6.0, 1.0, 1.0}, std::sqrt(1.8), 1, nullptr},
    };
    constexpr std::size_t kPerGroup = 500;
    constexpr std::size_t kTestPerGroup = 100;

    SplitMix64 samples(derive_seed(seed, kSamples));
    SplitMix64 splitter(derive_seed(seed, kSplits));
    Builder b;
    b.dim = 3;
    for (const auto& g : groups) {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < kPerGroup; ++i) {
            Vector x(3);
            for (std::size_t j = 0; j < 3; ++j) x[j] = samples.normal(g.mean[j], g.stddev);
            std::vector<std::string> flags;
            if (g.flag) flags.emplace_back(g.flag);
            ids.push_back(b.push(x, g.label, Split::Train, std::move(flags)));
        }
        splitter.shuffle(ids);
        for (std::size_t j = 0; j < kTestPerGroup; ++j) b.data.splits[ids[j]] = Split::Test;
    }
    b.data.kind = "toy3d";
    b.data.n_classes = 2;
    // Both artifacts sit at z ~ 8; their offsets from the clean Class-1 mean are recorded as patterns.
    b.data.masks["artifact_1"] = ArtifactMask{{2}};
    b.data.masks["artifact_2"] = ArtifactMask{{2}};
    b.data.artifact_patterns["artifact_1"] = {1.0, 0.0, 8.0};
    b.data.artifact_patterns["artifact_2"] = {1.0, -7.0, 8.0};
    b.data.associated_classes["artifact_1"] = {0};
    b.data.associated_classes["artifact_2"] = {0};
    b.data.manifest = {{"kind", "toy3d"}, {"seed", seed}};
    return b.finish();
}

LabeledDataset gen_backdoor(const SynthConfig& config) {
    config.validate();
    if (config.mask_width >= config.input_dim) {
        throw Error(ErrorCode::ConfigError, "mask_width must leave at least one clean feature coordinate");
    }
    if (config.poison_fraction == 0.0 && config.label_flip_fraction > 0.0 && config.label_flip_fraction < 1.0) {
        // Partial flips only make sense relative to a poisoned set.
        throw Error(ErrorCode::ConfigError, "label_flip_fraction given without poisoning");
    }
    const std::size_t dim = config.input_dim;
    const std::size_t features = dim - config.mask_width;
    SplitMix64 means_rng(derive_seed(config.seed, kMeans));
    SplitMix64 samples(derive_seed(config.seed, kSamples));
    SplitMix64 poison(derive_seed(config.seed, kPoison));
    SplitMix64 splitter(derive_seed(config.seed, kSplits));

    const auto means = class_means(config, features, means_rng);
    const std::string id = "artifact";
    ArtifactMask mask;
    Vector pattern(dim, 0.0);
    const double per_coord = config.artifact_magnitude / std::sqrt(static_cast<double>(config.mask_width));
    for (std::size_t j = features; j < dim; ++j) {
        mask.indices.insert(j);
        pattern[j] = per_coord;
    }

    Builder b;
    b.dim = dim;
    auto draw = [&](std::size_t cls) {
        Vector x(dim, 0.0);
        for (std::size_t j = 0; j < dim; ++j) x[j] = config.noise_std * samples.normal();
        for (std::size_t j = 0; j < features; ++j) x[j] += means[cls][j];
        return x;
    };
    std::vector<std::size_t> class0;
    for (std::size_t d = 0; d < config.n_classes; ++d) {
        for (std::size_t i = 0; i < config.samples_per_class; ++i) {
            const std::size_t idx = b.push(draw(d), d, Split::Train);
            if (d == 0) class0.push_back(idx);
        }
    }
    std::vector<std::size_t> test_ids;
    for (std::size_t d = 0; d < config.n_classes; ++d) {
        for (std::size_t i = 0; i < config.test_per_class; ++i) test_ids.push_back(b.push(draw(d), d, Split::Test));
    }

    b.data.masks[id] = mask;
    b.data.artifact_patterns[id] = pattern;
    b.data.insertion = Insertion::Additive;

    poison.shuffle(class0);
    const auto n_poison =
        static_cast<std::size_t>(std::llround(config.poison_fraction * static_cast<double>(class0.size())));
    const auto n_flip =
        static_cast<std::size_t>(std::llround(config.label_flip_fraction * static_cast<double>(n_poison)));
    for (std::size_t j = 0; j < n_poison; ++j) {
        const std::size_t i = class0[j];
        auto row = b.values.begin() + static_cast<std::ptrdiff_t>(i * dim);
        for (std::size_t k : mask.indices) row[static_cast<std::ptrdiff_t>(k)] += pattern[k];
        b.data.artifact_flags[i] = {id};
        if (j < n_flip) b.data.labels[i] = config.flip_target;
    }
    for (std::size_t i : test_ids) {
        Vector x(b.values.begin() + static_cast<std::ptrdiff_t>(i * dim),
                 b.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
        for (std::size_t k : mask.indices) x[k] += pattern[k];
        b.push(x, b.data.labels[i], Split::Test, {id});
    }
    assign_validation(b.data, config.n_classes, config.val_fraction, splitter);

    b.data.kind = "backdoor";
    b.data.n_classes = config.n_classes;
    b.data.associated_classes[id] = {config.flip_target};
    b.data.manifest = {{"kind", "backdoor"}, {"config", synth_config_to_json(config)}};
    return b.finish();
}

LabeledDataset gen_shortcut(const SynthConfig& config) {
    config.validate();
    const std::size_t count = config.artifact_count;
    if (count == 0) throw Error(ErrorCode::ConfigError, "artifact_count must be positive");
    if (count * config.mask_width >= config.input_dim) {
        throw Error(ErrorCode::ConfigError, "cannot fit " + std::to_string(count) + " disjoint masks of width " +
                                                std::to_string(config.mask_width) + " into input_dim " +
                                                std::to_string(config.input_dim));
    }
    const std::size_t dim = config.input_dim;
    const std::size_t features = dim - count * config.mask_width;
    SplitMix64 means_rng(derive_seed(config.seed, kMeans));
    SplitMix64 samples(derive_seed(config.seed, kSamples));
    SplitMix64 poison(derive_seed(config.seed, kPoison));
    SplitMix64 background(derive_seed(config.seed, kBackground));
    SplitMix64 splitter(derive_seed(config.seed, kSplits));
    SplitMix64 patterns_rng(derive_seed(config.seed, kPatterns));

    const auto means = class_means(config, features, means_rng);
    Builder b;
    b.dim = dim;
    std::vector<std::string> ids;
    for (std::size_t c = 0; c < count; ++c) {
        const std::string id = artifact_name(c, count);
        ids.push_back(id);
        ArtifactMask mask;
        Vector pattern(dim, 0.0);
        const Vector u = random_unit(patterns_rng, config.mask_width);
        for (std::size_t j = 0; j < config.mask_width; ++j) {
            const std::size_t coord = features + c * config.mask_width + j;
            mask.indices.insert(coord);
            pattern[coord] = config.artifact_magnitude * u[j];
        }
        b.data.masks[id] = std::move(mask);
        b.data.artifact_patterns[id] = std::move(pattern);
        b.data.associated_classes[id] = {0};
    }
    b.data.insertion = Insertion::Replace;

    auto draw = [&](std::size_t cls) {
        Vector x(dim, 0.0);
        for (std::size_t j = 0; j < features; ++j) x[j] = means[cls][j] + config.noise_std * samples.normal();
        // One neutral background object per slot; drawn for every slot so the
        // stream does not depend on poisoning decisions.
        for (std::size_t c = 0; c < count; ++c) {
            const Vector w = random_unit(background, config.mask_width);
            for (std::size_t j = 0; j < config.mask_width; ++j) {
                x[features + c * config.mask_width + j] = config.background_magnitude * w[j];
            }
        }
        return x;
    };
    auto random_subset = [&]() {
        const std::size_t k = 1 + static_cast<std::size_t>(poison.below(count));
        std::vector<std::size_t> order(count);
        std::iota(order.begin(), order.end(), 0);
        poison.shuffle(order);
        std::vector<std::string> chosen;
        for (std::size_t j = 0; j < k; ++j) chosen.push_back(ids[order[j]]);
        std::sort(chosen.begin(), chosen.end());
        return chosen;
    };

    std::vector<std::size_t> class0;
    for (std::size_t d = 0; d < config.n_classes; ++d) {
        for (std::size_t i = 0; i < config.samples_per_class; ++i) {
            const std::size_t idx = b.push(draw(d), d, Split::Train);
            if (d == 0) class0.push_back(idx);
        }
    }
    std::vector<std::size_t> test_ids;
    for (std::size_t d = 0; d < config.n_classes; ++d) {
        for (std::size_t i = 0; i < config.test_per_class; ++i) test_ids.push_back(b.push(draw(d), d, Split::Test));
    }

    poison.shuffle(class0);
    const auto n_poison =
        static_cast<std::size_t>(std::llround(config.poison_fraction * static_cast<double>(class0.size())));
    for (std::size_t j = 0; j < n_poison; ++j) {
        const std::size_t i = class0[j];
        auto chosen = random_subset();
        Vector x(b.values.begin() + static_cast<std::ptrdiff_t>(i * dim),
                 b.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
        for (const auto& id : chosen) x = b.data.with_artifact(x, id);
        std::copy(x.begin(), x.end(), b.values.begin() + static_cast<std::ptrdiff_t>(i * dim));
        b.data.artifact_flags[i] = std::move(chosen);
    }
    for (std::size_t i : test_ids) {
        Vector x(b.values.begin() + static_cast<std::ptrdiff_t>(i * dim),
                 b.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
        auto chosen = random_subset();
        for (const auto& id : chosen) x = b.data.with_artifact(x, id);
        b.push(x, b.data.labels[i], Split::Test, std::move(chosen));
    }
    assign_validation(b.data, config.n_classes, config.val_fraction, splitter);

    b.data.kind = "shortcut";
    b.data.n_classes = config.n_classes;
    b.data.manifest = {{"kind", "shortcut"}, {"config", synth_config_to_json(config)}};
    return b.finish();
}

InputPairs gen_paired_inputs(const LabeledDataset& data, const std::string& concept_id, std::size_t n_pairs,
                             std::uint64_t seed) {
    if (!data.masks.count(concept_id)) throw Error(ErrorCode::ConceptUnknown, "unknown concept '" + concept_id + "'");
    if (n_pairs == 0) throw Error(ErrorCode::InvalidArgument, "n_pairs must be positive");
    std::vector<std::size_t> pool =
        data.select([&](std::size_t i) { return data.splits[i] == Split::Train && data.is_clean(i); });
    if (pool.empty()) throw Error(ErrorCode::InvalidArgument, "no clean training samples to pair");
    SplitMix64 rng(seed);
    rng.shuffle(pool);
    InputPairs pairs;
    for (std::size_t j = 0; j < n_pairs; ++j) {
        // Without replacement while the pool lasts.
        const std::size_t i = j < pool.size() ? pool[j] : pool[static_cast<std::size_t>(rng.below(pool.size()))];
        const auto row = data.samples.row(i);
        pairs.clean_ids.push_back(i);
        pairs.clean.emplace_back(row.begin(), row.end());
        pairs.poisoned.push_back(data.with_artifact(row, concept_id));
    }
    return pairs;
}

PairedSet to_latent_pairs(const InputPairs& pairs, const MlpModel& model, std::size_t layer) {
    PairedSet out;
    out.clean_ids = pairs.clean_ids;
    for (std::size_t j = 0; j < pairs.clean.size(); ++j) {
        out.pairs.emplace_back(activation_at(model, layer, pairs.clean[j]),
                               activation_at(model, layer, pairs.poisoned[j]));
    }
    return out;
}

PairedSet gen_paired(const LabeledDataset& data, const std::string& concept_id, std::size_t n_pairs,
                     std::uint64_t seed, const MlpModel& model, std::size_t layer) {
    return to_latent_pairs(gen_paired_inputs(data, concept_id, n_pairs, seed), model, layer);
}

void save_dataset(const LabeledDataset& data, const std::string& jsonl_path, const std::string& manifest_path) {
    std::ofstream out(jsonl_path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + jsonl_path);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto row = data.samples.row(i);
        nlohmann::json rec = {{"id", i},
                              {"features", Vector(row.begin(), row.end())},
                              {"label", data.labels[i]},
                              {"artifacts", data.artifact_flags[i]},
                              {"split", split_name(data.splits[i])}};
        out << rec.dump() << '\n';
    }
    nlohmann::json manifest = data.manifest;
    manifest["kind"] = data.kind;
    manifest["n_classes"] = data.n_classes;
    manifest["input_dim"] = data.input_dim();
    manifest["n_samples"] = data.size();
    manifest["insertion"] = data.insertion == Insertion::Additive ? "additive" : "replace";
    nlohmann::json masks = nlohmann::json::object();
    for (const auto& [id, mask] : data.masks) masks[id] = std::vector<std::size_t>(mask.indices.begin(), mask.indices.end());
    manifest["masks"] = masks;
    manifest["artifact_patterns"] = data.artifact_patterns;
    nlohmann::json assoc = nlohmann::json::object();
    for (const auto& [id, classes] : data.associated_classes) {
        assoc[id] = std::vector<std::size_t>(classes.begin(), classes.end());
    }
    manifest["associated_classes"] = assoc;
    std::ofstream mout(manifest_path);
    if (!mout) throw Error(ErrorCode::IoError, "cannot write " + manifest_path);
    mout << manifest.dump(2) << '\n';
}

LabeledDataset load_dataset(const std::string& jsonl_path, const std::string& manifest_path) {
    std::ifstream min(manifest_path);
    if (!min) throw Error(ErrorCode::IoError, "cannot read " + manifest_path);
    std::ifstream in(jsonl_path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + jsonl_path);
    try {
        nlohmann::json manifest;
        min >> manifest;
        Builder b;
        b.dim = manifest.at("input_dim").get<std::size_t>();
        b.data.kind = manifest.at("kind").get<std::string>();
        b.data.n_classes = manifest.at("n_classes").get<std::size_t>();
        b.data.insertion = manifest.value("insertion", std::string("additive")) == "replace" ? Insertion::Replace
                                                                                             : Insertion::Additive;
        for (const auto& [id, idx] : manifest.at("masks").items()) {
            const auto v = idx.get<std::vector<std::size_t>>();
            b.data.masks[id] = ArtifactMask{{v.begin(), v.end()}};
        }
        b.data.artifact_patterns = manifest.value("artifact_patterns", std::map<std::string, Vector>{});
        if (manifest.contains("associated_classes")) {
            for (const auto& [id, cls] : manifest.at("associated_classes").items()) {
                const auto v = cls.get<std::vector<std::size_t>>();
                b.data.associated_classes[id] = {v.begin(), v.end()};
            }
        }
        b.data.manifest = manifest;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto rec = nlohmann::json::parse(line);
            const auto x = rec.at("features").get<Vector>();
            require_same_dim(x.size(), b.dim, "dataset record");
            b.push(x, rec.at("label").get<std::size_t>(), split_from_name(rec.at("split").get<std::string>()),
                   rec.at("artifacts").get<std::vector<std::string>>());
        }
        return b.finish();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("malformed dataset: ") + e.what());
    }
}

void write_dataset_csv(const LabeledDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out.precision(17);
    out << "id,split,label,artifacts";
    for (std::size_t j = 0; j < data.input_dim(); ++j) out << ",x" << j;
    out << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::string flags;
        for (const auto& f : data.artifact_flags[i]) flags += (flags.empty() ? "" : ";") + f;
        out << i << ',' << split_name(data.splits[i]) << ',' << data.labels[i] << ',' << flags;
        for (double v : data.samples.row(i)) out << ',' << v;
        out << '\n';
    }
}

}  // namespace rclarc
