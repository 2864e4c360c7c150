#include "rclarc/harness.hpp"

#include "rclarc/errors.hpp"
#include "rclarc/log.hpp"
#include "rclarc/metrics.hpp"
#include "rclarc/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace rclarc {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) config_error(where + " must be an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return key == k; });
        if (!known) config_error("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        config_error(std::string("bad value for '") + key + "' in " + where);
    }
}

json svm_to_json(const SvmConfig& c) {
    return {{"lambda", c.lambda}, {"max_iterations", c.max_iterations}, {"tolerance", c.tolerance},
            {"balance_classes", c.balance_classes}};
}

SvmConfig svm_from_json(const json& doc, const std::string& where) {
    check_keys(doc, {"lambda", "max_iterations", "tolerance", "balance_classes"}, where);
    SvmConfig c;
    c.lambda = get_or(doc, "lambda", c.lambda, where);
    c.max_iterations = get_or(doc, "max_iterations", c.max_iterations, where);
    c.tolerance = get_or(doc, "tolerance", c.tolerance, where);
    c.balance_classes = get_or(doc, "balance_classes", c.balance_classes, where);
    if (!(c.lambda > 0.0)) config_error(where + ".lambda must be > 0");
    if (c.max_iterations == 0) config_error(where + ".max_iterations must be positive");
    if (!(c.tolerance > 0.0)) config_error(where + ".tolerance must be > 0");
    return c;
}

std::vector<std::string> mode_names() {
    return {"vanilla", "pclarc", "rclarc-class", "rclarc-artifact", "rclarc-both"};
}

void check_mode_name(const std::string& name) {
    const auto names = mode_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) config_error("unknown mode '" + name + "'");
}

std::vector<Vector> activations(const MlpModel& model, std::size_t layer, const Matrix& samples,
                                const std::vector<std::size_t>& ids) {
    std::vector<Vector> out;
    out.reserve(ids.size());
    for (std::size_t i : ids) out.push_back(activation_at(model, layer, samples.row(i)));
    return out;
}

std::vector<std::size_t> unique_sorted(std::vector<std::size_t> ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Fixed-precision number formatting for CSV output.
std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

// Percentages in CSV exports; full precision stays in the JSON reports.
std::string pct(double v) {
    std::ostringstream s;
    s << std::setprecision(10) << 100.0 * v;
    return s.str();
}

ArtifactMask union_mask(const std::vector<std::string>& flags, const std::map<std::string, ArtifactMask>& masks) {
    ArtifactMask out;
    for (const auto& f : flags) {
        const auto it = masks.find(f);
        if (it == masks.end()) throw Error(ErrorCode::ConceptUnknown, "no mask for concept '" + f + "'");
        out.indices.insert(it->second.indices.begin(), it->second.indices.end());
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

StageSeeds::StageSeeds(std::uint64_t master)
    : data(derive_seed(master, 11)),
      init(derive_seed(master, 12)),
      train(derive_seed(master, 13)),
      pairs(derive_seed(master, 14)),
      probes(derive_seed(master, 15)),
      holdout_pairs(derive_seed(master, 16)),
      histogram(derive_seed(master, 17)) {}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    check_keys(doc, {"seed", "dataset", "model", "training", "cav", "probe", "modes", "class_map", "evaluation",
                     "inputs"},
               "config");
    ExperimentConfig c;
    c.seed = get_or(doc, "seed", c.seed, "config");

    if (doc.contains("dataset")) {
        const json& d = doc.at("dataset");
        check_keys(d, {"kind", "config", "jsonl", "manifest"}, "dataset");
        c.dataset.kind = get_or(d, "kind", c.dataset.kind, "dataset");
        if (c.dataset.kind != "toy3d" && c.dataset.kind != "backdoor" && c.dataset.kind != "shortcut" &&
            c.dataset.kind != "external") {
            config_error("unknown dataset kind '" + c.dataset.kind + "'");
        }
        if (d.contains("config")) {
            const json& s = d.at("config");
            if (!s.is_object()) config_error("dataset.config must be an object");
            const json known = synth_config_to_json(SynthConfig{});
            for (const auto& [key, value] : s.items()) {
                (void)value;
                if (!known.contains(key) || key == "seed") config_error("unknown key '" + key + "' in dataset.config");
            }
            c.dataset.synth = synth_config_from_json(s);
        }
        c.dataset.jsonl = get_or(d, "jsonl", c.dataset.jsonl, "dataset");
        c.dataset.manifest = get_or(d, "manifest", c.dataset.manifest, "dataset");
        if (c.dataset.kind == "external" && (c.dataset.jsonl.empty() || c.dataset.manifest.empty())) {
            config_error("external dataset needs 'jsonl' and 'manifest'");
        }
    }
    c.dataset.synth.seed = 0;
    c.dataset.synth.validate();

    if (doc.contains("model")) {
        const json& m = doc.at("model");
        check_keys(m, {"hidden", "split_layer"}, "model");
        c.model.hidden = get_or(m, "hidden", c.model.hidden, "model");
        if (m.contains("split_layer") && !m.at("split_layer").is_null()) {
            c.model.split_layer = get_or(m, "split_layer", std::size_t{0}, "model");
        }
    }
    if (c.model.hidden.empty()) config_error("model.hidden needs at least one hidden layer");
    for (std::size_t h : c.model.hidden) {
        if (h == 0) config_error("model.hidden sizes must be positive");
    }
    if (c.model.split_layer && (*c.model.split_layer == 0 || *c.model.split_layer > c.model.hidden.size())) {
        config_error("model.split_layer must name a hidden layer (1.." + std::to_string(c.model.hidden.size()) + ")");
    }

    if (doc.contains("training")) {
        const json& t = doc.at("training");
        check_keys(t, {"optimizer", "learning_rate", "epochs", "batch_size", "adam_beta1", "adam_beta2", "adam_epsilon"},
                   "training");
        try {
            c.training.optimizer = optimizer_from_name(get_or(t, "optimizer", std::string("adam"), "training"));
        } catch (const Error& e) {
            config_error(e.what());
        }
        c.training.learning_rate = get_or(t, "learning_rate", c.training.learning_rate, "training");
        c.training.epochs = get_or(t, "epochs", c.training.epochs, "training");
        if (t.contains("batch_size") && !t.at("batch_size").is_null()) {
            c.training.batch_size = get_or(t, "batch_size", std::size_t{0}, "training");
        }
        c.training.adam_beta1 = get_or(t, "adam_beta1", c.training.adam_beta1, "training");
        c.training.adam_beta2 = get_or(t, "adam_beta2", c.training.adam_beta2, "training");
        c.training.adam_epsilon = get_or(t, "adam_epsilon", c.training.adam_epsilon, "training");
    }
    if (!(c.training.learning_rate > 0.0)) config_error("training.learning_rate must be > 0");
    if (c.training.epochs == 0) config_error("training.epochs must be positive");
    if (c.training.batch_size && *c.training.batch_size == 0) config_error("training.batch_size must be positive");

    if (doc.contains("cav")) {
        const json& v = doc.at("cav");
        check_keys(v, {"method", "source", "n_pairs", "svm"}, "cav");
        try {
            c.cav.method = cav_method_from_name(get_or(v, "method", std::string("pattern"), "cav"));
        } catch (const Error& e) {
            config_error(e.what());
        }
        const auto source = get_or(v, "source", std::string("generated"), "cav");
        if (source != "generated" && source != "subset") config_error("cav.source must be 'generated' or 'subset'");
        c.cav.generated = source == "generated";
        c.cav.n_pairs = get_or(v, "n_pairs", c.cav.n_pairs, "cav");
        if (v.contains("svm")) c.cav.svm = svm_from_json(v.at("svm"), "cav.svm");
    }
    if (c.cav.n_pairs == 0) config_error("cav.n_pairs must be positive");

    if (doc.contains("probe")) {
        const json& p = doc.at("probe");
        check_keys(p, {"holdout_fraction", "max_negative_ratio", "svm"}, "probe");
        c.probe.holdout_fraction = get_or(p, "holdout_fraction", c.probe.holdout_fraction, "probe");
        c.probe.max_negative_ratio = get_or(p, "max_negative_ratio", c.probe.max_negative_ratio, "probe");
        if (p.contains("svm")) c.probe.svm = svm_from_json(p.at("svm"), "probe.svm");
    }
    if (!(c.probe.holdout_fraction >= 0.0 && c.probe.holdout_fraction < 1.0)) {
        config_error("probe.holdout_fraction must lie in [0, 1)");
    }
    if (!(c.probe.max_negative_ratio > 0.0)) config_error("probe.max_negative_ratio must be > 0");

    if (doc.contains("modes")) {
        c.modes = get_or(doc, "modes", c.modes, "config");
        if (c.modes.empty()) config_error("modes must not be empty");
    }
    for (const auto& m : c.modes) check_mode_name(m);

    if (doc.contains("class_map") && !doc.at("class_map").is_null()) {
        c.class_map = get_or(doc, "class_map", ClassMap{}, "config");
    }

    if (doc.contains("evaluation")) {
        const json& e = doc.at("evaluation");
        check_keys(e, {"relevance", "lrp_epsilon", "histogram_clean_samples"}, "evaluation");
        c.relevance = get_or(e, "relevance", c.relevance, "evaluation");
        c.lrp_epsilon = get_or(e, "lrp_epsilon", c.lrp_epsilon, "evaluation");
        c.histogram_clean_samples = get_or(e, "histogram_clean_samples", c.histogram_clean_samples, "evaluation");
    }
    if (!(c.lrp_epsilon >= 0.0)) config_error("evaluation.lrp_epsilon must be >= 0");

    if (doc.contains("inputs")) {
        const json& p = doc.at("inputs");
        check_keys(p, {"dataset_jsonl", "dataset_manifest", "model", "cavs", "probes_dir"}, "inputs");
        c.inputs.dataset_jsonl = get_or(p, "dataset_jsonl", std::string{}, "inputs");
        c.inputs.dataset_manifest = get_or(p, "dataset_manifest", std::string{}, "inputs");
        c.inputs.model = get_or(p, "model", std::string{}, "inputs");
        c.inputs.cavs = get_or(p, "cavs", std::string{}, "inputs");
        c.inputs.probes_dir = get_or(p, "probes_dir", std::string{}, "inputs");
        if (c.inputs.dataset_jsonl.empty() != c.inputs.dataset_manifest.empty()) {
            config_error("inputs.dataset_jsonl and inputs.dataset_manifest go together");
        }
    }
    return c;
}

json ExperimentConfig::to_json() const {
    json synth = synth_config_to_json(dataset.synth);
    synth.erase("seed");
    json d = {{"kind", dataset.kind}, {"config", synth}};
    if (dataset.kind == "external") {
        d["jsonl"] = dataset.jsonl;
        d["manifest"] = dataset.manifest;
    }
    json model_doc = {{"hidden", model.hidden}, {"split_layer", default_split_layer(model)}};
    json training_doc = {{"optimizer", optimizer_name(training.optimizer)},
                         {"learning_rate", training.learning_rate},
                         {"epochs", training.epochs},
                         {"batch_size", training.batch_size ? json(*training.batch_size) : json(nullptr)},
                         {"adam_beta1", training.adam_beta1},
                         {"adam_beta2", training.adam_beta2},
                         {"adam_epsilon", training.adam_epsilon}};
    json doc = {
        {"seed", seed},
        {"dataset", d},
        {"model", model_doc},
        {"training", training_doc},
        {"cav",
         {{"method", cav_method_name(cav.method)},
          {"source", cav.generated ? "generated" : "subset"},
          {"n_pairs", cav.n_pairs},
          {"svm", svm_to_json(cav.svm)}}},
        {"probe",
         {{"holdout_fraction", probe.holdout_fraction},
          {"max_negative_ratio", probe.max_negative_ratio},
          {"svm", svm_to_json(probe.svm)}}},
        {"modes", modes},
        {"class_map", class_map ? json(*class_map) : json(nullptr)},
        {"evaluation",
         {{"relevance", relevance}, {"lrp_epsilon", lrp_epsilon}, {"histogram_clean_samples", histogram_clean_samples}}},
    };
    json in = json::object();
    if (!inputs.dataset_jsonl.empty()) {
        in["dataset_jsonl"] = inputs.dataset_jsonl;
        in["dataset_manifest"] = inputs.dataset_manifest;
    }
    if (!inputs.model.empty()) in["model"] = inputs.model;
    if (!inputs.cavs.empty()) in["cavs"] = inputs.cavs;
    if (!inputs.probes_dir.empty()) in["probes_dir"] = inputs.probes_dir;
    doc["inputs"] = in;
    return doc;
}

std::string ExperimentConfig::hash() const { return hex16(fnv1a(to_json().dump())); }

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) config_error("cannot read config file " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        config_error("config file " + path + " is not valid JSON: " + e.what());
    }
    return ExperimentConfig::from_json(doc);
}

ExperimentConfig preset_config(const std::string& kind) {
    ExperimentConfig c;
    c.training.optimizer = Optimizer::Adam;
    c.training.learning_rate = 0.01;
    c.training.batch_size = std::nullopt;
    if (kind == "toy3d") {
        c.dataset.kind = "toy3d";
        c.model.hidden = {30};
        c.training.epochs = 5000;
        c.modes = mode_names();
        return c;
    }
    if (kind == "backdoor") {
        c.dataset.kind = "backdoor";
        SynthConfig& s = c.dataset.synth;
        s.n_classes = 2;
        s.input_dim = 20;
        s.samples_per_class = 500;
        s.artifact_count = 1;
        s.artifact_magnitude = 4.0;
        s.poison_fraction = 0.33;
        s.label_flip_fraction = 1.0;
        s.flip_target = 1;
        s.mask_width = 4;
        s.class_separation = 4.0;
        s.noise_std = 1.0;
        s.test_per_class = 100;
        c.model.hidden = {32, 16};
        c.training.epochs = 400;
        return c;
    }
    if (kind == "shortcut") {
        c.dataset.kind = "shortcut";
        SynthConfig& s = c.dataset.synth;
        s.n_classes = 10;
        s.input_dim = 64;
        s.samples_per_class = 300;
        s.artifact_count = 10;
        s.artifact_magnitude = 4.0;
        s.poison_fraction = 0.5;
        s.label_flip_fraction = 0.0;
        s.mask_width = 4;
        s.class_separation = 6.0;
        s.noise_std = 1.0;
        s.similar_classes = 4;
        s.similar_separation = 2.0;
        s.background_magnitude = 4.0;
        s.test_per_class = 100;
        c.model.hidden = {64, 32};
        c.training.epochs = 300;
        return c;
    }
    config_error("unknown preset '" + kind + "' (expected toy3d, backdoor or shortcut)");
}

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

std::size_t default_split_layer(const ModelSpec& spec) { return spec.split_layer.value_or(spec.hidden.size()); }

LabeledDataset build_dataset(const ExperimentConfig& config) {
    const StageSeeds seeds(config.seed);
    if (config.dataset.kind == "toy3d") return gen_toy3d(seeds.data);
    if (config.dataset.kind == "external") return load_dataset(config.dataset.jsonl, config.dataset.manifest);
    SynthConfig synth = config.dataset.synth;
    synth.seed = seeds.data;
    if (config.dataset.kind == "backdoor") return gen_backdoor(synth);
    if (config.dataset.kind == "shortcut") return gen_shortcut(synth);
    config_error("unknown dataset kind '" + config.dataset.kind + "'");
}

TrainResult train_model(const ExperimentConfig& config, const LabeledDataset& data) {
    const StageSeeds seeds(config.seed);
    std::vector<std::size_t> dims = {data.input_dim()};
    dims.insert(dims.end(), config.model.hidden.begin(), config.model.hidden.end());
    dims.push_back(data.n_classes);
    MlpModel model = make_mlp(dims, default_split_layer(config.model), seeds.init);

    const auto train_ids = data.indices(Split::Train);
    if (train_ids.empty()) throw Error(ErrorCode::InvalidArgument, "dataset has no training samples");
    Matrix x(train_ids.size(), data.input_dim());
    std::vector<std::size_t> y;
    for (std::size_t r = 0; r < train_ids.size(); ++r) {
        const auto src = data.samples.row(train_ids[r]);
        std::copy(src.begin(), src.end(), x.row(r).begin());
        y.push_back(data.labels[train_ids[r]]);
    }
    TrainConfig tc = config.training;
    tc.seed = seeds.train;
    return train(std::move(model), x, y, tc);
}

CavFit fit_cavs(const ExperimentConfig& config, const LabeledDataset& data, const MlpModel& model, std::size_t layer,
                CavMethod method) {
    const StageSeeds seeds(config.seed);
    CavFit fit;
    std::size_t index = 0;
    for (const auto& id : data.concept_ids()) {
        std::vector<Vector> pos, neg;
        std::vector<std::size_t> neg_ids;
        json prov;
        if (config.cav.generated) {
            const PairedSet pairs = gen_paired(data, id, config.cav.n_pairs, seeds.pairs, model, layer);
            for (const auto& [clean, poisoned] : pairs.pairs) {
                neg.push_back(clean);
                pos.push_back(poisoned);
            }
            neg_ids = pairs.clean_ids;
            prov = {{"source", "generated"}, {"n_pairs", pairs.size()}};
        } else {
            const auto pos_ids =
                data.select([&](std::size_t i) { return data.splits[i] == Split::Train && data.has_flag(i, id); });
            neg_ids = data.select([&](std::size_t i) { return data.splits[i] == Split::Train && data.is_clean(i); });
            pos = activations(model, layer, data.samples, pos_ids);
            neg = activations(model, layer, data.samples, neg_ids);
            prov = {{"source", "subset"}, {"n_positives", pos.size()}, {"n_negatives", neg.size()}};
        }
        Cav cav;
        if (method == CavMethod::Pattern) {
            cav = pattern_cav(pos, neg);
        } else {
            SvmConfig svm = config.cav.svm;
            svm.seed = derive_seed(seeds.pairs, 100 + index);
            cav = filter_cav(pos, neg, svm);
        }
        cav.concept_id = id;
        cav.layer = layer;
        cav.negative_ids = unique_sorted(std::move(neg_ids));
        for (const auto& [k, v] : prov.items()) cav.provenance[k] = v;

        const PairedSet held_out = gen_paired(data, id, config.cav.n_pairs, seeds.holdout_pairs, model, layer);
        fit.alignment[id] = alignment_score(cav, held_out);
        fit.cavs.push_back(std::move(cav));
        ++index;
    }
    return fit;
}

CavBank make_bank(std::vector<Cav> cavs, const LabeledDataset& data, const MlpModel& model) {
    ActivationTable table;
    for (const auto& cav : cavs) {
        for (std::size_t i : cav.negative_ids) {
            if (i >= data.size()) throw Error(ErrorCode::InvalidArgument, "CAV negative id out of range");
            if (!table.count(i)) table.emplace(i, activation_at(model, cav.layer, data.samples.row(i)));
        }
    }
    return CavBank(std::move(cavs), std::move(table));
}

ProbeMap fit_probes(const ExperimentConfig& config, const LabeledDataset& data, const MlpModel& model,
                    std::size_t layer) {
    const StageSeeds seeds(config.seed);
    ProbeMap probes;
    std::size_t index = 0;
    for (const auto& id : data.concept_ids()) {
        const auto pos_ids =
            data.select([&](std::size_t i) { return data.splits[i] == Split::Train && data.has_flag(i, id); });
        const auto neg_ids =
            data.select([&](std::size_t i) { return data.splits[i] == Split::Train && !data.has_flag(i, id); });
        ProbeConfig pc = config.probe;
        pc.seed = derive_seed(seeds.probes, index++);
        pc.svm.seed = pc.seed;
        LinearProbe probe = train_artifact_probe(activations(model, layer, data.samples, pos_ids),
                                                 activations(model, layer, data.samples, neg_ids), pc);
        probe.concept_id = id;
        if (!probe.converged) log_warning("probe for '" + id + "' did not converge");
        probes.emplace(id, std::move(probe));
    }
    return probes;
}

ClassMap resolve_class_map(const ExperimentConfig& config, const LabeledDataset& data) {
    if (config.class_map) return *config.class_map;
    ClassMap map;
    for (const auto& [id, classes] : data.associated_classes) map[id] = classes;
    return map;
}

CorrectionMode make_mode(const std::string& name, const ClassMap& class_map, const ProbeMap& probes) {
    if (name == "vanilla") return CorrectionMode::vanilla();
    if (name == "pclarc") return CorrectionMode::pclarc();
    const std::string prefix = "rclarc-";
    if (name.rfind(prefix, 0) != 0) config_error("unknown mode '" + name + "'");
    ConditionFn cond;
    try {
        cond.kind = condition_kind_from_name(name.substr(prefix.size()));
    } catch (const Error&) {
        config_error("unknown mode '" + name + "'");
    }
    if (cond.kind == ConditionKind::Always) config_error("unknown mode '" + name + "'");
    if (cond.kind != ConditionKind::Artifact) cond.class_map = class_map;
    if (cond.kind != ConditionKind::Class) cond.probes = probes;
    return CorrectionMode::rclarc(std::move(cond));
}

Pipeline build_pipeline(const ExperimentConfig& config, PipelineStage until) {
    Pipeline p;
    p.config = config;
    if (!config.inputs.dataset_jsonl.empty()) {
        p.data = load_dataset(config.inputs.dataset_jsonl, config.inputs.dataset_manifest);
    } else {
        p.data = build_dataset(config);
    }
    if (until == PipelineStage::Data) return p;

    if (!config.inputs.model.empty()) {
        p.model = load_model(config.inputs.model);
        p.training = {{"source", "loaded"}};
    } else {
        TrainResult tr = train_model(config, p.data);
        p.model = std::move(tr.model);
        p.training = {{"source", "trained"},
                      {"epochs", tr.loss_history.size()},
                      {"initial_loss", tr.loss_history.empty() ? 0.0 : tr.loss_history.front()},
                      {"final_loss", tr.loss_history.empty() ? 0.0 : tr.loss_history.back()},
                      {"train_accuracy", tr.train_accuracy}};
    }
    if (p.model.input_dim() != p.data.input_dim() || p.model.output_dim() != p.data.n_classes) {
        throw Error(ErrorCode::DimensionMismatch, "model shape does not match the dataset");
    }
    if (until == PipelineStage::Model) return p;

    const std::size_t layer = p.model.split_layer;
    if (!config.inputs.cavs.empty()) {
        auto cavs = load_cavs(config.inputs.cavs);
        const StageSeeds seeds(config.seed);
        for (const auto& cav : cavs) {
            if (p.data.masks.count(cav.concept_id)) {
                p.alignment[cav.concept_id] = alignment_score(
                    cav, gen_paired(p.data, cav.concept_id, config.cav.n_pairs, seeds.holdout_pairs, p.model, cav.layer));
            }
        }
        p.bank = make_bank(std::move(cavs), p.data, p.model);
    } else {
        CavFit fit = fit_cavs(config, p.data, p.model, layer, config.cav.method);
        p.alignment = std::move(fit.alignment);
        p.bank = make_bank(std::move(fit.cavs), p.data, p.model);
    }
    p.class_map = resolve_class_map(config, p.data);
    if (until == PipelineStage::Cavs) return p;

    if (!config.inputs.probes_dir.empty()) {
        for (const auto& cav : p.bank.cavs()) {
            const auto path = std::filesystem::path(config.inputs.probes_dir) / ("probe_" + cav.concept_id + ".json");
            p.probes.emplace(cav.concept_id, load_probe(path.string()));
        }
    } else {
        p.probes = fit_probes(config, p.data, p.model, p.bank.layer());
    }
    return p;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalSet make_eval_set(const LabeledDataset& data, const std::vector<std::size_t>& ids) {
    EvalSet set;
    set.ids = ids;
    std::vector<double> values;
    values.reserve(ids.size() * data.input_dim());
    for (std::size_t i : ids) {
        if (i >= data.size()) throw Error(ErrorCode::InvalidArgument, "sample id out of range");
        const auto r = data.samples.row(i);
        values.insert(values.end(), r.begin(), r.end());
        set.labels.push_back(data.labels[i]);
        set.flags.push_back(data.artifact_flags[i]);
    }
    set.samples = Matrix(ids.size(), data.input_dim(), std::move(values));
    return set;
}

EvalSet clean_test_set(const LabeledDataset& data) {
    return make_eval_set(data,
                         data.select([&](std::size_t i) { return data.splits[i] == Split::Test && data.is_clean(i); }));
}

EvalSet artifact_test_set(const LabeledDataset& data) {
    return make_eval_set(data,
                         data.select([&](std::size_t i) { return data.splits[i] == Split::Test && !data.is_clean(i); }));
}

json ModeMetrics::to_json() const {
    return {{"mode", mode},
            {"accuracy_clean", accuracy_clean},
            {"accuracy_artifact", accuracy_artifact},
            {"f1_clean", f1_clean},
            {"f1_artifact", f1_artifact},
            {"mean_relevance_share", mean_relevance_share ? json(*mean_relevance_share) : json(nullptr)},
            {"n_clean", n_clean},
            {"n_artifact", n_artifact},
            {"corrected_clean", corrected_clean},
            {"corrected_artifact", corrected_artifact}};
}

ModeMetrics evaluate(const MlpModel& model, const CorrectionMode& mode, const CavBank* bank, const EvalSet& clean,
                     const EvalSet& artifact, const std::map<std::string, ArtifactMask>& masks,
                     const EvalOptions& options) {
    if (clean.size() == 0) throw Error(ErrorCode::EmptyTestSet, "clean test set is empty");
    if (artifact.size() == 0) throw Error(ErrorCode::EmptyTestSet, "artifact test set is empty");
    const std::set<std::size_t> clean_ids(clean.ids.begin(), clean.ids.end());
    for (std::size_t i : artifact.ids) {
        if (clean_ids.count(i)) {
            throw Error(ErrorCode::InvalidArgument,
                        "clean and artifact test sets share sample " + std::to_string(i));
        }
    }
    if (mode.kind == CorrectionMode::Kind::RClArC && bank) mode.condition.validate(*bank);

    ModeMetrics m;
    m.mode = mode.name();
    m.n_clean = clean.size();
    m.n_artifact = artifact.size();

    auto predict = [&](const EvalSet& set, std::size_t& corrected) {
        std::vector<std::size_t> pred(set.size());
        for (std::size_t r = 0; r < set.size(); ++r) {
            const CorrectedOutput out = corrected_forward_detailed(model, set.samples.row(r), mode, bank);
            pred[r] = argmax(out.logits);
            if (!out.applied.empty()) ++corrected;
        }
        return pred;
    };
    const auto pred_clean = predict(clean, m.corrected_clean);
    const auto pred_artifact = predict(artifact, m.corrected_artifact);
    m.accuracy_clean = accuracy_score(clean.labels, pred_clean);
    m.f1_clean = macro_f1(clean.labels, pred_clean);
    m.accuracy_artifact = accuracy_score(artifact.labels, pred_artifact);
    m.f1_artifact = macro_f1(artifact.labels, pred_artifact);

    if (options.relevance) {
        double total = 0.0;
        std::size_t used = 0;
        for (std::size_t r = 0; r < artifact.size(); ++r) {
            const ArtifactMask mask = union_mask(artifact.flags[r], masks);
            const RelevanceMap rmap =
                lrp_epsilon(model, artifact.samples.row(r), pred_artifact[r], options.lrp_epsilon, mode, bank);
            try {
                total += relevance_share(rmap, mask);
                ++used;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::ZeroRelevance) throw;
                log_warning("sample " + std::to_string(artifact.ids[r]) + " has zero relevance; skipped");
            }
        }
        if (used > 0) m.mean_relevance_share = total / static_cast<double>(used);
    }
    return m;
}

json EvalReport::to_json() const {
    json rows_doc = json::array();
    for (const auto& r : rows) rows_doc.push_back(r.to_json());
    return {{"metadata", metadata}, {"rows", rows_doc}};
}

const ModeMetrics& EvalReport::row(const std::string& mode) const {
    for (const auto& r : rows) {
        if (r.mode == mode) return r;
    }
    throw Error(ErrorCode::InvalidArgument, "report has no row for mode '" + mode + "'");
}

EvalReport evaluate_pipeline(const Pipeline& pipeline, const std::vector<std::string>& modes) {
    const EvalSet clean = clean_test_set(pipeline.data);
    const EvalSet artifact = artifact_test_set(pipeline.data);
    EvalOptions opts{pipeline.config.relevance, pipeline.config.lrp_epsilon};
    EvalReport report;
    for (const auto& name : modes) {
        const CorrectionMode mode = make_mode(name, pipeline.class_map, pipeline.probes);
        report.rows.push_back(
            evaluate(pipeline.model, mode, &pipeline.bank, clean, artifact, pipeline.data.masks, opts));
    }
    report.metadata = {{"seed", pipeline.config.seed},
                       {"config_hash", pipeline.config.hash()},
                       {"dataset", pipeline.data.kind},
                       {"split_layer", pipeline.model.split_layer},
                       {"cav_method", cav_method_name(pipeline.config.cav.method)},
                       {"metric_scale", "fraction"},
                       {"f1_averaging", "macro"}};
    return report;
}

// ---------------------------------------------------------------------------
// Toy 3D experiment
// ---------------------------------------------------------------------------

const Toy3dModeResult& Toy3dResult::mode(const std::string& name) const {
    for (const auto& m : modes) {
        if (m.mode == name) return m;
    }
    throw Error(ErrorCode::InvalidArgument, "toy3d result has no mode '" + name + "'");
}

json Toy3dResult::to_json() const {
    json modes_doc = json::array();
    for (const auto& m : modes) {
        modes_doc.push_back({{"mode", m.mode},
                             {"accuracy_all", m.accuracy_all},
                             {"accuracy_test", m.accuracy_test},
                             {"class2_total", m.class2_total},
                             {"class2_misclassified", m.class2_misclassified},
                             {"moved", m.moved}});
    }
    json cavs_doc = json::array();
    for (const auto& cav : bank.cavs()) {
        cavs_doc.push_back({{"concept", cav.concept_id}, {"direction", cav.direction}, {"z_neg", cav.z_neg}});
    }
    json probes_doc = json::object();
    for (const auto& [id, p] : probes) {
        probes_doc[id] = {{"weight", p.weight}, {"bias", p.bias}, {"holdout_accuracy", p.holdout_accuracy}};
    }
    return {{"vanilla_test_accuracy", vanilla_test_accuracy},
            {"modes", modes_doc},
            {"cavs", cavs_doc},
            {"probes", probes_doc},
            {"model", model.metadata}};
}

void Toy3dResult::write_points_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out << "mode,sample_id,group,label,split,x,y,z,predicted\n";
    for (const auto& m : modes) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::string group = data.labels[i] == 1 ? "class2" : "class1";
            if (!data.is_clean(i)) group = data.artifact_flags[i].front();
            out << m.mode << ',' << i << ',' << group << ',' << data.labels[i] << ',' << split_name(data.splits[i]);
            for (std::size_t j = 0; j < 3; ++j) out << ',' << fmt(m.points(i, j));
            out << ',' << m.predictions[i] << '\n';
        }
    }
}

Toy3dResult run_toy3d(std::uint64_t seed, const Toy3dOptions& options) {
    const StageSeeds seeds(seed);
    Toy3dResult res;
    res.data = gen_toy3d(seeds.data);
    const LabeledDataset& data = res.data;

    ExperimentConfig cfg = preset_config("toy3d");
    cfg.seed = seed;
    cfg.model.hidden = {options.hidden};
    cfg.training.epochs = options.epochs;
    cfg.training.learning_rate = options.learning_rate;
    TrainResult tr = train_model(cfg, data);
    res.model = std::move(tr.model);

    // Negatives for both CAVs are the clean Class-1 samples, so the anchor is their mean.
    const auto neg_ids = data.select(
        [&](std::size_t i) { return data.splits[i] == Split::Train && data.is_clean(i) && data.labels[i] == 0; });
    const auto neg = activations(res.model, 0, data.samples, neg_ids);
    std::vector<Cav> cavs;
    for (const auto& id : data.concept_ids()) {
        const auto pos_ids =
            data.select([&](std::size_t i) { return data.splits[i] == Split::Train && data.has_flag(i, id); });
        Cav cav = pattern_cav(activations(res.model, 0, data.samples, pos_ids), neg);
        cav.concept_id = id;
        cav.layer = 0;
        cav.negative_ids = neg_ids;
        cav.provenance["source"] = "subset";
        cavs.push_back(std::move(cav));
    }
    res.bank = make_bank(std::move(cavs), data, res.model);
    res.probes = fit_probes(cfg, data, res.model, 0);
    for (const auto& id : data.concept_ids()) res.class_map[id] = {0};

    for (const auto& name : mode_names()) {
        const CorrectionMode mode = make_mode(name, res.class_map, res.probes);
        Toy3dModeResult mr;
        mr.mode = name;
        mr.points = data.samples;
        std::size_t correct_all = 0, correct_test = 0, n_test = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto x = data.samples.row(i);
            const CorrectedOutput out = corrected_forward_detailed(res.model, x, mode, &res.bank);
            const std::size_t pred = argmax(out.logits);
            mr.predictions.push_back(pred);
            if (!out.applied.empty()) {
                const Vector moved = res.bank.correction(out.applied)->apply(x);
                std::copy(moved.begin(), moved.end(), mr.points.row(i).begin());
                if (!std::equal(moved.begin(), moved.end(), x.begin())) ++mr.moved;
            }
            const bool ok = pred == data.labels[i];
            correct_all += ok;
            if (data.splits[i] == Split::Test) {
                ++n_test;
                correct_test += ok;
            }
            if (data.labels[i] == 1) {
                ++mr.class2_total;
                if (!ok) ++mr.class2_misclassified;
            }
        }
        mr.accuracy_all = static_cast<double>(correct_all) / static_cast<double>(data.size());
        mr.accuracy_test = static_cast<double>(correct_test) / static_cast<double>(n_test);
        res.modes.push_back(std::move(mr));
    }
    res.vanilla_test_accuracy = res.mode("vanilla").accuracy_test;
    return res;
}

// ---------------------------------------------------------------------------
// Sweep and histogram exports
// ---------------------------------------------------------------------------

double SweepResult::accuracy(std::size_t k, const std::string& mode) const {
    for (const auto& r : rows) {
        if (r.k == k && r.mode == mode) return r.accuracy_clean;
    }
    throw Error(ErrorCode::InvalidArgument, "sweep has no point (" + std::to_string(k) + ", " + mode + ")");
}

json SweepResult::to_json() const {
    json rows_doc = json::array();
    for (const auto& r : rows) {
        rows_doc.push_back({{"k", r.k},
                            {"mode", r.mode},
                            {"accuracy_clean", r.accuracy_clean},
                            {"f1_clean", r.f1_clean},
                            {"accuracy_artifact", r.accuracy_artifact}});
    }
    return {{"concept_order", concept_order}, {"rows", rows_doc}};
}

void SweepResult::write_csv(std::ostream& out) const {
    out << "k,mode,accuracy_clean,f1_clean,accuracy_artifact\n";
    for (const auto& r : rows) {
        out << r.k << ',' << r.mode << ',' << pct(r.accuracy_clean) << ',' << pct(r.f1_clean) << ','
            << pct(r.accuracy_artifact) << '\n';
    }
}

SweepResult sweep_n_artifacts(const Pipeline& pipeline, const std::vector<std::string>& modes) {
    const EvalSet clean = clean_test_set(pipeline.data);
    const EvalSet artifact = artifact_test_set(pipeline.data);
    const EvalOptions opts{false, pipeline.config.lrp_epsilon};
    SweepResult result;
    for (const auto& cav : pipeline.bank.cavs()) result.concept_order.push_back(cav.concept_id);

    const ModeMetrics vanilla =
        evaluate(pipeline.model, CorrectionMode::vanilla(), nullptr, clean, artifact, pipeline.data.masks, opts);
    for (const auto& name : modes) {
        result.rows.push_back({0, name, vanilla.accuracy_clean, vanilla.f1_clean, vanilla.accuracy_artifact});
    }
    ConceptSet active;
    for (std::size_t k = 1; k <= result.concept_order.size(); ++k) {
        active.insert(result.concept_order[k - 1]);
        const CavBank sub = pipeline.bank.subset(active);
        for (const auto& name : modes) {
            const CorrectionMode mode = make_mode(name, pipeline.class_map, pipeline.probes);
            const ModeMetrics m = evaluate(pipeline.model, mode, &sub, clean, artifact, pipeline.data.masks, opts);
            result.rows.push_back({k, name, m.accuracy_clean, m.f1_clean, m.accuracy_artifact});
        }
    }
    return result;
}

std::vector<HistogramRow> export_histograms(std::span<const Cav> cavs, const LabeledDataset& data,
                                            const MlpModel& model, std::size_t clean_samples, std::uint64_t seed) {
    std::vector<HistogramRow> rows;
    if (data.size() == 0) return rows;
    auto clean_pool = data.select([&](std::size_t i) { return data.splits[i] != Split::Test && data.is_clean(i); });
    SplitMix64 rng(seed);
    rng.shuffle(clean_pool);
    clean_pool.resize(std::min(clean_pool.size(), clean_samples));
    std::sort(clean_pool.begin(), clean_pool.end());

    for (const auto& cav : cavs) {
        auto emit = [&](std::size_t i, const char* group) {
            const Vector a = activation_at(model, cav.layer, data.samples.row(i));
            rows.push_back({cav.concept_id, i, group, data.labels[i], cav_activation(cav, a)});
        };
        for (std::size_t i : clean_pool) emit(i, "clean");
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data.splits[i] != Split::Test && data.has_flag(i, cav.concept_id)) emit(i, "artifact");
        }
    }
    return rows;
}

void write_histogram_csv(std::ostream& out, const std::vector<HistogramRow>& rows) {
    out << "concept,sample_id,group,label,activation\n";
    for (const auto& r : rows) {
        out << r.concept_id << ',' << r.sample_id << ',' << r.group << ',' << r.label << ',' << fmt(r.activation)
            << '\n';
    }
}

CosineTable class_cosines(std::span<const Cav> cavs, const LabeledDataset& data, const MlpModel& model) {
    if (cavs.empty()) return {Matrix(0, data.n_classes), {}};
    const std::size_t layer = cavs.front().layer;
    const auto ids = data.select([&](std::size_t i) { return data.splits[i] != Split::Test && data.is_clean(i); });
    if (ids.empty()) throw Error(ErrorCode::InvalidArgument, "no clean samples for class directions");
    const auto acts = activations(model, layer, data.samples, ids);
    const Vector global = mean_of(acts);
    std::vector<Vector> means;
    for (std::size_t d = 0; d < data.n_classes; ++d) {
        std::vector<Vector> members;
        for (std::size_t r = 0; r < ids.size(); ++r) {
            if (data.labels[ids[r]] == d) members.push_back(acts[r]);
        }
        // A class without clean samples has no direction; the global mean marks it missing.
        means.push_back(members.empty() ? global : mean_of(members));
    }
    return class_direction_cosines(cavs, means, global);
}

void write_cosine_csv(std::ostream& out, std::span<const Cav> cavs, const CosineTable& table) {
    out << "concept,class,cosine\n";
    for (std::size_t i = 0; i < cavs.size(); ++i) {
        for (std::size_t d = 0; d < table.values.cols(); ++d) {
            out << cavs[i].concept_id << ',' << d << ',';
            if (!table.is_missing(i, d)) out << fmt(table.values(i, d));
            out << '\n';
        }
    }
}

}  // namespace rclarc
