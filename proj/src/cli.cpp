#include "rclarc/cli.hpp"

#include "rclarc/errors.hpp"
#include "rclarc/harness.hpp"
#include "rclarc/log.hpp"
#include "rclarc/metrics.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace rclarc {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kToolVersion = "1.0.0";

struct Options {
    std::string subcommand;
    std::string config_path;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::string mode;
    std::string dataset_jsonl;
    std::string dataset_manifest;
    std::string model;
    std::string cavs;
    std::string probes_dir;
};

// Collects the files a subcommand writes, relative to the output directory.
class Output {
public:
    explicit Output(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    fs::path path(const std::string& name) {
        files_.push_back(name);
        const fs::path p = dir_ / name;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        return p;
    }

    std::ofstream open(const std::string& name) {
        const fs::path p = path(name);
        std::ofstream out(p);
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
        return out;
    }

    void write_json(const std::string& name, const json& doc) { open(name) << doc.dump(2) << '\n'; }

    const std::vector<std::string>& files() const { return files_; }

private:
    fs::path dir_;
    std::vector<std::string> files_;
};

ExperimentConfig resolve_config(const Options& o) {
    ExperimentConfig cfg;
    if (!o.config_path.empty()) {
        cfg = load_experiment_config(o.config_path);
    } else {
        std::string preset = o.preset;
        if (preset.empty()) preset = o.subcommand == "toy3d" ? "toy3d" : "shortcut";
        cfg = preset_config(preset);
    }
    if (o.seed) cfg.seed = *o.seed;
    if (!o.dataset_jsonl.empty() || !o.dataset_manifest.empty()) {
        if (o.dataset_jsonl.empty() || o.dataset_manifest.empty()) {
            throw Error(ErrorCode::ConfigError, "--dataset and --manifest go together");
        }
        cfg.inputs.dataset_jsonl = o.dataset_jsonl;
        cfg.inputs.dataset_manifest = o.dataset_manifest;
    }
    if (!o.model.empty()) cfg.inputs.model = o.model;
    if (!o.cavs.empty()) cfg.inputs.cavs = o.cavs;
    if (!o.probes_dir.empty()) cfg.inputs.probes_dir = o.probes_dir;
    if (!o.mode.empty()) cfg.modes = {o.mode};
    return cfg;
}

json base_report(const std::string& subcommand, const ExperimentConfig& cfg) {
    return {{"subcommand", subcommand}, {"seed", cfg.seed}, {"config_hash", cfg.hash()}};
}

std::string join(const std::vector<std::string>& items, char sep) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) s += sep;
        s += items[i];
    }
    return s;
}

json dataset_summary(const LabeledDataset& data) {
    std::map<std::string, std::size_t> per_split, per_flag;
    std::map<std::string, std::size_t> per_label;
    for (std::size_t i = 0; i < data.size(); ++i) {
        ++per_split[split_name(data.splits[i])];
        ++per_label[std::to_string(data.labels[i])];
        for (const auto& f : data.artifact_flags[i]) ++per_flag[f];
    }
    return {{"kind", data.kind},
            {"n_samples", data.size()},
            {"input_dim", data.input_dim()},
            {"n_classes", data.n_classes},
            {"per_split", per_split},
            {"per_label", per_label},
            {"per_artifact", per_flag}};
}

double split_accuracy(const MlpModel& model, const EvalSet& set) {
    if (set.size() == 0) return 0.0;
    return accuracy(model, set.samples, set.labels);
}

json cmd_gen_data(const ExperimentConfig& cfg, Output& out) {
    const Pipeline p = build_pipeline(cfg, PipelineStage::Data);
    save_dataset(p.data, out.path("dataset.jsonl").string(), out.path("dataset_manifest.json").string());
    write_dataset_csv(p.data, out.path("dataset.csv").string());
    json report = base_report("gen-data", cfg);
    report["dataset"] = dataset_summary(p.data);
    return report;
}

json cmd_train(const ExperimentConfig& cfg, Output& out) {
    const Pipeline p = build_pipeline(cfg, PipelineStage::Model);
    save_model(p.model, out.path("model.json").string());
    const EvalSet val = make_eval_set(p.data, p.data.indices(Split::Val));
    json report = base_report("train", cfg);
    report["training"] = p.training;
    report["layer_dims"] = p.model.layer_dims;
    report["split_layer"] = p.model.split_layer;
    report["accuracy"] = {{"val", split_accuracy(p.model, val)},
                          {"test_clean", split_accuracy(p.model, clean_test_set(p.data))},
                          {"test_artifact", split_accuracy(p.model, artifact_test_set(p.data))}};
    return report;
}

json cmd_fit_cav(const ExperimentConfig& cfg, Output& out) {
    const Pipeline p = build_pipeline(cfg, PipelineStage::Cavs);
    save_cavs(p.bank.cavs(), out.path("cavs.json").string());
    json report = base_report("fit-cav", cfg);
    report["layer"] = p.bank.layer();
    report["method"] = cav_method_name(cfg.cav.method);
    json concepts = json::object();
    for (const auto& cav : p.bank.cavs()) {
        json entry = {{"provenance", cav.provenance}, {"n_negatives", cav.negative_ids.size()}};
        const auto it = p.alignment.find(cav.concept_id);
        if (it != p.alignment.end()) {
            entry["alignment"] = it->second.score;
            entry["alignment_pairs_used"] = it->second.used;
        }
        concepts[cav.concept_id] = entry;
    }
    report["concepts"] = concepts;
    return report;
}

json cmd_fit_probe(const ExperimentConfig& cfg, Output& out) {
    const Pipeline p = build_pipeline(cfg, PipelineStage::Probes);
    json report = base_report("fit-probe", cfg);
    json probes = json::object();
    for (const auto& [id, probe] : p.probes) {
        save_probe(probe, out.path("probes/probe_" + id + ".json").string());
        probes[id] = {{"holdout_accuracy", probe.holdout_accuracy}, {"converged", probe.converged}};
    }
    report["layer"] = p.bank.layer();
    report["probes"] = probes;
    return report;
}

json cmd_correct(const ExperimentConfig& cfg, const Options& o, Output& out) {
    if (o.mode.empty()) throw Error(ErrorCode::ConfigError, "correct needs --mode");
    const Pipeline p = build_pipeline(cfg, PipelineStage::Probes);
    const CorrectionMode mode = make_mode(o.mode, p.class_map, p.probes);
    if (mode.kind == CorrectionMode::Kind::RClArC) mode.condition.validate(p.bank);
    const auto ids = p.data.indices(Split::Test);

    auto csv = out.open("corrected.csv");
    csv << "sample_id,label,artifacts,predicted_vanilla,predicted,applied\n";
    std::size_t corrected = 0, changed = 0, correct_before = 0, correct_after = 0;
    for (std::size_t i : ids) {
        const auto x = p.data.samples.row(i);
        const CorrectedOutput res = corrected_forward_detailed(p.model, x, mode, &p.bank);
        const std::size_t before = predict_class(p.model, x);
        const std::size_t after = argmax(res.logits);
        corrected += !res.applied.empty();
        changed += before != after;
        correct_before += before == p.data.labels[i];
        correct_after += after == p.data.labels[i];
        csv << i << ',' << p.data.labels[i] << ',' << join(p.data.artifact_flags[i], ';') << ',' << before << ','
            << after << ',' << join(std::vector<std::string>(res.applied.begin(), res.applied.end()), ';') << '\n';
    }
    json report = base_report("correct", cfg);
    report["mode"] = o.mode;
    report["n_samples"] = ids.size();
    report["n_corrected"] = corrected;
    report["n_prediction_changed"] = changed;
    if (!ids.empty()) {
        report["accuracy_before"] = static_cast<double>(correct_before) / static_cast<double>(ids.size());
        report["accuracy_after"] = static_cast<double>(correct_after) / static_cast<double>(ids.size());
    }
    return report;
}

json cmd_evaluate(const ExperimentConfig& cfg, const Options& o, Output& out) {
    const Pipeline p = build_pipeline(cfg, PipelineStage::Probes);
    const EvalReport eval = evaluate_pipeline(p, cfg.modes);

    auto csv = out.open("metrics.csv");
    csv << "mode,accuracy_clean,accuracy_artifact,f1_clean,f1_artifact,mean_relevance_share\n";
    auto pct = [](double v) {
        std::ostringstream s;
        s.precision(10);
        s << 100.0 * v;
        return s.str();
    };
    for (const auto& r : eval.rows) {
        csv << r.mode << ',' << pct(r.accuracy_clean) << ',' << pct(r.accuracy_artifact) << ',' << pct(r.f1_clean)
            << ',' << pct(r.f1_artifact) << ',' << (r.mean_relevance_share ? pct(*r.mean_relevance_share) : "")
            << '\n';
    }

    if (!o.mode.empty() && cfg.relevance) {
        const CorrectionMode mode = make_mode(o.mode, p.class_map, p.probes);
        const EvalSet artifact = artifact_test_set(p.data);
        auto rel = out.open("relevance.csv");
        for (std::size_t r = 0; r < artifact.size(); ++r) {
            const auto x = artifact.samples.row(r);
            const std::size_t target = argmax(corrected_forward(p.model, x, mode, &p.bank));
            write_relevance_csv(rel, artifact.ids[r], lrp_epsilon(p.model, x, target, cfg.lrp_epsilon, mode, &p.bank),
                                r == 0);
        }
    }
    json report = base_report("evaluate", cfg);
    report["evaluation"] = eval.to_json();
    return report;
}

json cmd_sweep(const ExperimentConfig& cfg, Output& out) {
    const Pipeline p = build_pipeline(cfg, PipelineStage::Probes);
    const SweepResult sweep = sweep_n_artifacts(p, cfg.modes);
    auto csv = out.open("sweep.csv");
    sweep.write_csv(csv);
    json report = base_report("sweep", cfg);
    report["sweep"] = sweep.to_json();
    return report;
}

json cmd_toy3d(const ExperimentConfig& cfg, Output& out) {
    Toy3dOptions opts;
    opts.epochs = cfg.training.epochs;
    opts.learning_rate = cfg.training.learning_rate;
    opts.hidden = cfg.model.hidden.front();
    const Toy3dResult res = run_toy3d(cfg.seed, opts);
    res.write_points_csv(out.path("points.csv").string());
    json report = base_report("toy3d", cfg);
    report["toy3d"] = res.to_json();
    return report;
}

json cmd_export_histograms(const ExperimentConfig& cfg, Output& out) {
    const Pipeline p = build_pipeline(cfg, PipelineStage::Cavs);
    const StageSeeds seeds(cfg.seed);
    const auto rows = export_histograms(p.bank.cavs(), p.data, p.model, cfg.histogram_clean_samples, seeds.histogram);
    auto csv = out.open("histograms.csv");
    write_histogram_csv(csv, rows);
    const CosineTable cos = class_cosines(p.bank.cavs(), p.data, p.model);
    auto cos_csv = out.open("class_cosines.csv");
    write_cosine_csv(cos_csv, p.bank.cavs(), cos);

    json groups = json::object();
    std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> sums;
    for (const auto& r : rows) {
        auto& s = sums[r.concept_id][r.group];
        s.first += r.activation;
        ++s.second;
    }
    for (const auto& [id, by_group] : sums) {
        for (const auto& [group, s] : by_group) {
            groups[id][group] = {{"count", s.second}, {"mean", s.first / static_cast<double>(s.second)}};
        }
    }
    json report = base_report("export-histograms", cfg);
    report["groups"] = groups;
    return report;
}

json dispatch(const Options& o, const ExperimentConfig& cfg, Output& out) {
    if (o.subcommand == "gen-data") return cmd_gen_data(cfg, out);
    if (o.subcommand == "train") return cmd_train(cfg, out);
    if (o.subcommand == "fit-cav") return cmd_fit_cav(cfg, out);
    if (o.subcommand == "fit-probe") return cmd_fit_probe(cfg, out);
    if (o.subcommand == "correct") return cmd_correct(cfg, o, out);
    if (o.subcommand == "evaluate") return cmd_evaluate(cfg, o, out);
    if (o.subcommand == "sweep") return cmd_sweep(cfg, out);
    if (o.subcommand == "toy3d") return cmd_toy3d(cfg, out);
    if (o.subcommand == "export-histograms") return cmd_export_histograms(cfg, out);
    throw Error(ErrorCode::ConfigError, "unknown subcommand '" + o.subcommand + "'");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Reactive artifact correction experiments"};
    app.require_subcommand(1);
    Options o;
    const std::vector<std::pair<const char*, const char*>> commands = {
        {"gen-data", "Generate a synthetic dataset"},
        {"train", "Train the MLP"},
        {"fit-cav", "Fit one CAV per artifact"},
        {"fit-probe", "Fit one artifact probe per concept"},
        {"correct", "Apply a correction mode to the test split"},
        {"evaluate", "Accuracy, macro-F1 and artifact relevance per mode"},
        {"sweep", "Clean accuracy against the number of suppressed artifacts"},
        {"toy3d", "Three-dimensional toy experiment"},
        {"export-histograms", "CAV activation histograms and class cosines"},
    };
    std::uint64_t seed = 0;
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--preset", o.preset, "Built-in config when --config is absent")
            ->check(CLI::IsMember({"toy3d", "backdoor", "shortcut"}));
        sub->add_option("--seed", seed, "Master seed (overrides the config)");
        sub->add_option("--out", o.out, "Output directory")->capture_default_str();
        sub->add_option("--mode", o.mode, "Correction mode")
            ->check(CLI::IsMember({"vanilla", "pclarc", "rclarc-class", "rclarc-artifact", "rclarc-both"}));
        sub->add_option("--dataset", o.dataset_jsonl, "Reuse a dataset (JSON lines)");
        sub->add_option("--manifest", o.dataset_manifest, "Manifest of --dataset");
        sub->add_option("--model", o.model, "Reuse a trained model");
        sub->add_option("--cavs", o.cavs, "Reuse a CAV bank");
        sub->add_option("--probes", o.probes_dir, "Reuse probes from this directory");
        sub->callback([&o, name = std::string(name)] { o.subcommand = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    for (const auto* sub : app.get_subcommands()) {
        if (sub->count("--seed") > 0) o.seed = seed;
    }

    try {
        const ExperimentConfig cfg = resolve_config(o);
        Output out(o.out);
        out.write_json("config.json", cfg.to_json());
        json report = dispatch(o, cfg, out);
        out.write_json("report.json", report);

        std::vector<std::string> rerun = {"rclarc_cli", o.subcommand, "--config", "config.json", "--seed",
                                          std::to_string(cfg.seed)};
        if (!o.mode.empty()) {
            rerun.push_back("--mode");
            rerun.push_back(o.mode);
        }
        std::vector<std::string> files = out.files();
        files.push_back("run_manifest.json");
        const json manifest = {{"tool", "rclarc_cli"},
                               {"version", kToolVersion},
                               {"subcommand", o.subcommand},
                               {"seed", cfg.seed},
                               {"mode", o.mode.empty() ? json(nullptr) : json(o.mode)},
                               {"config_hash", cfg.hash()},
                               {"config", cfg.to_json()},
                               {"outputs", files},
                               {"rerun", join(rerun, ' ')}};
        out.write_json("run_manifest.json", manifest);
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code() == ErrorCode::ConfigError ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace rclarc
