#include "test_util.hpp"

#include "rclarc/harness.hpp"

#include <sstream>

using namespace rclarc;

namespace {

ExperimentConfig tiny_config(std::uint64_t seed = 3) {
    ExperimentConfig c = ExperimentConfig::from_json(nlohmann::json{
        {"seed", seed},
        {"dataset",
         {{"kind", "shortcut"},
          {"config",
           {{"n_classes", 3}, {"input_dim", 16}, {"samples_per_class", 80}, {"artifact_count", 2},
            {"mask_width", 3}, {"poison_fraction", 0.5}, {"test_per_class", 20}, {"background_magnitude", 2.0}}}}},
        {"model", {{"hidden", {12}}}},
        {"training", {{"epochs", 60}}},
        {"cav", {{"n_pairs", 60}}}});
    return c;
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys and bad values") {
    CHECK_ERROR_CODE(ExperimentConfig::from_json(nlohmann::json{{"sede", 1}}), ErrorCode::ConfigError);
    CHECK_ERROR_CODE(ExperimentConfig::from_json(nlohmann::json{{"model", {{"hidden", "wide"}}}}),
                     ErrorCode::ConfigError);
    CHECK_ERROR_CODE(ExperimentConfig::from_json(nlohmann::json{{"modes", {"pclarc", "magic"}}}),
                     ErrorCode::ConfigError);
    CHECK_ERROR_CODE(ExperimentConfig::from_json(nlohmann::json{{"dataset", {{"config", {{"seed", 1}}}}}}),
                     ErrorCode::ConfigError);
    CHECK_ERROR_CODE(load_experiment_config("/nonexistent/config.json"), ErrorCode::ConfigError);
}

TEST_CASE("config round trip and hash stability") {
    const ExperimentConfig a = tiny_config();
    const ExperimentConfig b = ExperimentConfig::from_json(a.to_json());
    CHECK(a.to_json() == b.to_json());
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    ExperimentConfig c = a;
    c.seed = 4;
    CHECK(c.hash() != a.hash());
    for (const char* kind : {"toy3d", "backdoor", "shortcut"}) {
        const ExperimentConfig p = preset_config(kind);
        CHECK(ExperimentConfig::from_json(p.to_json()).hash() == p.hash());
    }
}

TEST_CASE("stage seeds are distinct") {
    const StageSeeds s(7);
    const std::set<std::uint64_t> all = {s.data, s.init, s.train, s.pairs, s.probes, s.holdout_pairs, s.histogram};
    CHECK(all.size() == 7);
}

TEST_CASE("pipeline evaluation on a tiny shortcut problem") {
    const Pipeline p = build_pipeline(tiny_config(), PipelineStage::Probes);
    CHECK(p.bank.size() == 2);
    CHECK(p.probes.size() == 2);
    CHECK(p.bank.layer() == 1);

    const EvalSet clean = clean_test_set(p.data);
    const EvalSet art = artifact_test_set(p.data);
    CHECK(clean.size() == 60);
    CHECK(art.size() == 60);

    EvalOptions opts;
    const ModeMetrics vanilla = evaluate(p.model, CorrectionMode::vanilla(), nullptr, clean, art, p.data.masks, opts);
    CHECK(vanilla.corrected_clean == 0);
    REQUIRE(vanilla.mean_relevance_share.has_value());
    CHECK(*vanilla.mean_relevance_share >= 0.0);
    CHECK(*vanilla.mean_relevance_share <= 1.0);

    CHECK_ERROR_CODE(evaluate(p.model, CorrectionMode::vanilla(), nullptr, clean, clean, p.data.masks, opts),
                     ErrorCode::InvalidArgument);
    CHECK_ERROR_CODE(evaluate(p.model, CorrectionMode::vanilla(), nullptr, EvalSet{}, art, p.data.masks, opts),
                     ErrorCode::EmptyTestSet);

    const EvalReport report = evaluate_pipeline(p, p.config.modes);
    CHECK(report.rows.size() == 5);
    CHECK(report.metadata["metric_scale"] == "fraction");
    CHECK(report.row("vanilla").accuracy_clean == doctest::Approx(vanilla.accuracy_clean));
    // The combined condition never corrects more than either single condition.
    CHECK(report.row("rclarc-both").corrected_artifact <= report.row("rclarc-class").corrected_artifact);
    CHECK(report.row("rclarc-both").corrected_artifact <= report.row("rclarc-artifact").corrected_artifact);
    CHECK(report.row("pclarc").corrected_clean == clean.size());
}

TEST_CASE("sweep at k = 0 is vanilla for every mode") {
    const Pipeline p = build_pipeline(tiny_config(), PipelineStage::Probes);
    const SweepResult s = sweep_n_artifacts(p, p.config.modes);
    const double vanilla = s.accuracy(0, "vanilla");
    for (const auto& mode : p.config.modes) CHECK(s.accuracy(0, mode) == vanilla);
    CHECK(s.concept_order.size() == 2);
    std::ostringstream csv;
    s.write_csv(csv);
    CHECK(csv.str().find("k,") == 0);
}

TEST_CASE("histogram export") {
    const Pipeline p = build_pipeline(tiny_config(), PipelineStage::Cavs);
    const auto rows = export_histograms(p.bank.cavs(), p.data, p.model, 50, 1);
    for (const auto& cav : p.bank.cavs()) {
        double clean = 0.0, artifact = 0.0;
        std::size_t nc = 0, na = 0;
        for (const auto& r : rows) {
            if (r.concept_id != cav.concept_id) continue;
            if (r.group == "clean") {
                clean += r.activation;
                ++nc;
            } else {
                artifact += r.activation;
                ++na;
            }
        }
        CHECK(nc == 50);
        REQUIRE(na > 0);
        CHECK(artifact / na > clean / nc);
    }
    std::ostringstream out;
    write_histogram_csv(out, {});
    CHECK(out.str() == "concept,sample_id,group,label,activation\n");

    const CosineTable t = class_cosines(p.bank.cavs(), p.data, p.model);
    CHECK(t.values.rows() == 2);
    CHECK(t.values.cols() == 3);
}

TEST_CASE("histograms of a dataset without clean samples hold only artifact rows") {
    Pipeline p = build_pipeline(tiny_config(), PipelineStage::Cavs);
    LabeledDataset only_test = p.data;
    for (auto& s : only_test.splits) s = Split::Test;
    CHECK(export_histograms(p.bank.cavs(), only_test, p.model, 50, 1).empty());
}

TEST_CASE("toy3d: class-conditional correction leaves points predicted as class 2 in place") {
    Toy3dOptions opts;
    opts.epochs = 1500;
    const Toy3dResult r = run_toy3d(0, opts);
    const auto& vanilla = r.mode("vanilla");
    const auto& cls = r.mode("rclarc-class");
    std::size_t predicted_two = 0;
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        if (vanilla.predictions[i] != 1) continue;
        ++predicted_two;
        for (std::size_t j = 0; j < 3; ++j) CHECK(cls.points(i, j) == r.data.samples(i, j));
    }
    CHECK(predicted_two > 0);
    CHECK(r.mode("vanilla").moved == 0);
    CHECK(r.mode("pclarc").moved == r.data.size());
    CHECK_THROWS(r.mode("nope"));
}
