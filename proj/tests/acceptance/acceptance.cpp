// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (no arguments = all)

#include "../support/helpers.hpp"
#include "../support/oracles.hpp"

#include "rclarc/attribution.hpp"
#include "rclarc/clarc.hpp"
#include "rclarc/harness.hpp"
#include "rclarc/log.hpp"
#include "rclarc/nn.hpp"
#include "rclarc/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#ifndef RCLARC_CLI_PATH
#error "RCLARC_CLI_PATH must point at the CLI binary"
#endif

using namespace rclarc;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits.
constexpr double kOracleTolerance = 1e-8;        // relative
constexpr double kPropertyTolerance = 1e-9;      // times scale
constexpr double kSingleMultiTolerance = 1e-12;  // absolute
constexpr double kGradientTolerance = 1e-4;      // relative
constexpr double kToyVanillaMin = 0.99;
constexpr double kToyClass2MissMin = 0.10;
constexpr double kToyRclarcGap = 0.01;
constexpr std::uint64_t kToySeeds[] = {0, 1, 2, 3, 4};
constexpr double kSweepPclarcDrop = 0.05;
constexpr double kSweepRclarcGap = 0.02;
constexpr double kConservationTolerance = 1e-6;  // relative
// The epsilon rule absorbs relevance by design; conservation is checked with a
// stabilizer small enough that the absorbed share is below the tolerance.
constexpr double kConservationEpsilon = 1e-9;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------------------

Outcome projection_oracle() {
    SplitMix64 rng(101);
    double worst = 0.0;
    const std::size_t cases = 200;
    for (std::size_t t = 0; t < cases; ++t) {
        const std::size_t k = 1 + rng.below(5);
        const std::size_t m = k + rng.below(51 - k);
        auto c = testsupport::random_projection_case(rng, k, m);
        const Vector a = testsupport::random_vector(rng, m, 5.0);
        const Vector got = multi_pclarc_apply(a, c.bank, c.concepts);
        const oracle::Vec want = oracle::constrained_nearest(c.directions, c.anchor, a);
        double dev = 0.0;
        for (std::size_t i = 0; i < m; ++i) dev = std::max(dev, std::fabs(got[i] - want[i]));
        worst = std::max(worst, dev / std::max(1.0, oracle::max_abs(a)));
    }
    return {worst <= kOracleTolerance, std::to_string(cases) + " cases, max relative deviation " + num(worst)};
}

Outcome projection_properties() {
    SplitMix64 rng(202);
    double worst_idem = 0.0, worst_constraint = 0.0;
    const std::size_t cases = 1000;
    for (std::size_t t = 0; t < cases; ++t) {
        const std::size_t k = 1 + rng.below(5);
        const std::size_t m = k + rng.below(51 - k);
        auto c = testsupport::random_projection_case(rng, k, m);
        const Vector a = testsupport::random_vector(rng, m, 5.0);
        const Vector p = multi_pclarc_apply(a, c.bank, c.concepts);
        const Vector pp = multi_pclarc_apply(p, c.bank, c.concepts);
        const double scale = std::max({1.0, oracle::max_abs(a), oracle::max_abs(c.anchor)});
        for (std::size_t i = 0; i < m; ++i) worst_idem = std::max(worst_idem, std::fabs(pp[i] - p[i]) / scale);
        for (const auto& v : c.directions) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) s += v[i] * (p[i] - c.anchor[i]);
            worst_constraint = std::max(worst_constraint, std::fabs(s) / scale);
        }
    }
    const bool ok = worst_idem <= kPropertyTolerance && worst_constraint <= kPropertyTolerance;
    return {ok, std::to_string(cases) + " cases, idempotence " + num(worst_idem) + ", constraint " +
                    num(worst_constraint) + " (scaled)"};
}

Outcome single_multi_consistency() {
    SplitMix64 rng(303);
    double worst = 0.0;
    for (std::size_t t = 0; t < 100; ++t) {
        const std::size_t m = 1 + rng.below(50);
        auto c = testsupport::random_projection_case(rng, 1, m);
        const Vector a = testsupport::random_vector(rng, m, 5.0);
        const Vector multi = multi_pclarc_apply(a, c.bank, c.concepts);
        const Vector single = pclarc_apply(a, c.bank.cavs().front());
        for (std::size_t i = 0; i < m; ++i) worst = std::max(worst, std::fabs(multi[i] - single[i]));
    }
    return {worst <= kSingleMultiTolerance, "100 cases, max absolute difference " + num(worst)};
}

Outcome gradient_check_criterion() {
    SplitMix64 rng(404);
    double worst = 0.0;
    std::size_t checked = 0, skipped = 0;
    for (std::size_t n = 0; n < 20; ++n) {
        std::vector<std::size_t> dims = {2 + rng.below(5)};
        const std::size_t hidden_layers = 1 + rng.below(2);
        for (std::size_t h = 0; h < hidden_layers; ++h) dims.push_back(3 + rng.below(6));
        dims.push_back(2 + rng.below(3));
        MlpModel model = make_mlp(dims, 1, rng.next_u64());
        for (auto& b : model.biases) {
            for (double& v : b) v = 0.1 * rng.normal();
        }
        const Vector x = testsupport::random_vector(rng, dims.front());
        const std::size_t label = rng.below(dims.back());
        const Gradients g = loss_gradients(model, x, label);

        // Central differences through the test-side forward pass.
        const double eps = 1e-6;
        const oracle::Net base = testsupport::to_oracle(model);
        const auto pattern = oracle::relu_pattern(oracle::run(base, x));
        auto probe = [&](const oracle::Net& net, std::vector<bool>& pat) {
            const auto tr = oracle::run(net, x);
            pat = oracle::relu_pattern(tr);
            return oracle::softmax_xent(tr.post.back(), label);
        };
        auto compare = [&](double analytic, double fd, bool kink) {
            if (kink) {
                ++skipped;
                return;
            }
            ++checked;
            const double denom = std::max({std::fabs(analytic), std::fabs(fd), 1e-6});
            worst = std::max(worst, std::fabs(analytic - fd) / denom);
        };
        for (std::size_t k = 0; k < model.num_layers(); ++k) {
            for (std::size_t o = 0; o < base.w[k].size(); ++o) {
                for (std::size_t i = 0; i < base.w[k][o].size(); ++i) {
                    oracle::Net plus = base, minus = base;
                    std::vector<bool> pp, pm;
                    plus.w[k][o][i] += eps;
                    minus.w[k][o][i] -= eps;
                    const double lp = probe(plus, pp);
                    const double lm = probe(minus, pm);
                    compare(g.weights[k](o, i), (lp - lm) / (2 * eps), pp != pattern || pm != pattern);
                }
                oracle::Net plus = base, minus = base;
                std::vector<bool> pp, pm;
                plus.b[k][o] += eps;
                minus.b[k][o] -= eps;
                const double lp = probe(plus, pp);
                const double lm = probe(minus, pm);
                compare(g.biases[k][o], (lp - lm) / (2 * eps), pp != pattern || pm != pattern);
            }
        }
    }
    return {worst <= kGradientTolerance && checked > 0, "20 nets, " + std::to_string(checked) +
                                                             " parameters, max relative error " + num(worst) + " (" +
                                                             std::to_string(skipped) + " at ReLU kinks)"};
}

const Toy3dResult& toy3d(std::uint64_t seed = 0) {
    static std::map<std::uint64_t, Toy3dResult> cache;
    auto it = cache.find(seed);
    if (it == cache.end()) it = cache.emplace(seed, run_toy3d(seed)).first;
    return it->second;
}

// (a) and (c) must hold for every seed. How many Class-2 points cross the
// boundary depends on where training happens to put it far from the data, so
// (b) is judged on the median over the fixed seed set.
Outcome toy3d_reproduction() {
    bool a = true, c = true;
    std::vector<double> misses;
    std::string detail;
    for (std::uint64_t seed : kToySeeds) {
        const Toy3dResult& r = toy3d(seed);
        const auto& van = r.mode("vanilla");
        const auto& pc = r.mode("pclarc");
        const auto& rc = r.mode("rclarc-class");
        const auto& ra = r.mode("rclarc-artifact");
        const double miss = static_cast<double>(pc.class2_misclassified) / static_cast<double>(pc.class2_total);
        misses.push_back(miss);
        a = a && r.vanilla_test_accuracy >= kToyVanillaMin;
        c = c && std::fabs(rc.accuracy_all - van.accuracy_all) <= kToyRclarcGap &&
            std::fabs(ra.accuracy_all - van.accuracy_all) <= kToyRclarcGap;
        detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": vanilla test " +
                  num(r.vanilla_test_accuracy) + ", P-ClArC class-2 miss " + num(miss) + ", overall vanilla/R-class/" +
                  "R-artifact " + num(van.accuracy_all) + "/" + num(rc.accuracy_all) + "/" + num(ra.accuracy_all);
    }
    std::sort(misses.begin(), misses.end());
    const double median = misses[misses.size() / 2];
    const bool b = median > kToyClass2MissMin;
    return {a && b && c, std::string("(a) ") + (a ? "ok" : "FAIL") + " (b) median miss " + num(median) +
                             (b ? " ok" : " FAIL") + " (c) " + (c ? "ok" : "FAIL") + " -- " + detail};
}

ExperimentConfig backdoor_config(std::uint64_t seed) {
    ExperimentConfig cfg = preset_config("backdoor");
    cfg.seed = seed;
    return cfg;
}

const Pipeline& backdoor_pipeline(std::uint64_t seed) {
    static std::map<std::uint64_t, Pipeline> cache;
    auto it = cache.find(seed);
    if (it == cache.end()) it = cache.emplace(seed, build_pipeline(backdoor_config(seed), PipelineStage::Probes)).first;
    return it->second;
}

// Samples predicted outside every associated class must produce bit-identical logits.
std::size_t count_reactivity_violations(const MlpModel& model, const CavBank& bank, const ClassMap& class_map,
                                        const Matrix& samples, std::size_t& checked) {
    std::set<std::size_t> associated;
    for (const auto& [id, cls] : class_map) associated.insert(cls.begin(), cls.end());
    ConditionFn cond;
    cond.kind = ConditionKind::Class;
    cond.class_map = class_map;
    const CorrectionMode mode = CorrectionMode::rclarc(cond);
    std::size_t violations = 0;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        const Vector van = forward(model, samples.row(i));
        if (associated.count(argmax(van))) continue;
        ++checked;
        const Vector got = corrected_forward(model, samples.row(i), mode, &bank);
        if (got.size() != van.size() || std::memcmp(got.data(), van.data(), van.size() * sizeof(double)) != 0) {
            ++violations;
        }
    }
    return violations;
}

Outcome reactivity_identity() {
    std::size_t checked = 0, violations = 0;
    const Toy3dResult& r = toy3d();
    violations += count_reactivity_violations(r.model, r.bank, r.class_map, r.data.samples, checked);
    const std::size_t toy_checked = checked;
    const Pipeline& p = backdoor_pipeline(1);
    violations += count_reactivity_violations(p.model, p.bank, p.class_map, p.data.samples, checked);
    return {violations == 0 && toy_checked > 0 && checked > toy_checked,
            std::to_string(checked) + " samples predicted outside the associated classes (toy3d input space, " +
                "backdoor hidden layer), " + std::to_string(violations) + " differ from vanilla"};
}

Outcome alignment_ordering() {
    std::string detail;
    bool ok = true;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ExperimentConfig cfg = backdoor_config(seed);
        const Pipeline& p = backdoor_pipeline(seed);
        const std::size_t layer = p.model.split_layer;
        const CavFit pattern = fit_cavs(cfg, p.data, p.model, layer, CavMethod::Pattern);
        const CavFit filter = fit_cavs(cfg, p.data, p.model, layer, CavMethod::Filter);
        for (const auto& [id, score] : pattern.alignment) {
            const double f = filter.alignment.at(id).score;
            ok = ok && score.score > f;
            detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " pattern " +
                      num(score.score) + " vs filter " + num(f);
        }
    }
    return {ok, detail};
}

Outcome shortcut_sweep() {
    ExperimentConfig cfg = preset_config("shortcut");
    cfg.seed = 1;
    const Pipeline p = build_pipeline(cfg, PipelineStage::Probes);
    const SweepResult sweep = sweep_n_artifacts(p, {"pclarc", "rclarc-both"});
    const std::size_t k = p.bank.size();
    const double van = sweep.accuracy(0, "pclarc");
    const double pc = sweep.accuracy(k, "pclarc");
    const double rb = sweep.accuracy(k, "rclarc-both");
    const bool ok = k == 10 && pc <= van - kSweepPclarcDrop && std::fabs(rb - van) <= kSweepRclarcGap;
    return {ok, "k = " + std::to_string(k) + ": vanilla " + num(van) + ", P-ClArC " + num(pc) + ", R-ClArC-both " +
                    num(rb)};
}

Outcome relevance_reduction() {
    bool ok = true;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const Pipeline& p = backdoor_pipeline(seed);
        const EvalReport rep = evaluate_pipeline(p, p.config.modes);
        const double van = rep.row("vanilla").mean_relevance_share.value_or(-1.0);
        detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " vanilla " + num(van);
        for (const auto& row : rep.rows) {
            if (row.mode == "vanilla") continue;
            const double share = row.mean_relevance_share.value_or(2.0);
            ok = ok && share <= van;
            detail += ", " + row.mode + " " + num(share);
        }
    }
    // Conservation on bias-free networks.
    SplitMix64 rng(909);
    double worst = 0.0;
    for (std::size_t n = 0; n < 20; ++n) {
        std::vector<std::size_t> dims = {3 + rng.below(8), 4 + rng.below(8), 4 + rng.below(8), 2 + rng.below(3)};
        MlpModel model = make_mlp(dims, 1, rng.next_u64());
        const Vector x = testsupport::random_vector(rng, dims.front());
        const Vector logits = forward(model, x);
        const std::size_t target = argmax(logits);
        const RelevanceMap r = lrp_epsilon(model, x, target, kConservationEpsilon, CorrectionMode::vanilla(), nullptr);
        double sum = 0.0;
        for (double v : r.values) sum += v;
        worst = std::max(worst, std::fabs(sum - logits[target]) / std::max(std::fabs(logits[target]), 1e-12));
    }
    ok = ok && worst <= kConservationTolerance;
    return {ok, detail + "; conservation max relative error " + num(worst)};
}

int run_cli(const std::vector<std::string>& args) {
    std::string cmd = std::string("\"") + RCLARC_CLI_PATH + "\"";
    for (const auto& a : args) cmd += " \"" + a + "\"";
    cmd += " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

Outcome cli_determinism() {
    const fs::path root = fs::temp_directory_path() / ("rclarc_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const nlohmann::json config = {
        {"dataset",
         {{"kind", "shortcut"},
          {"config",
           {{"n_classes", 3}, {"input_dim", 16}, {"samples_per_class", 80}, {"artifact_count", 2},
            {"mask_width", 3}, {"poison_fraction", 0.5}, {"test_per_class", 20}, {"background_magnitude", 2.0}}}}},
        {"model", {{"hidden", {12}}}},
        {"training", {{"epochs", 60}}},
        {"cav", {{"n_pairs", 60}}}};
    const std::string cfg_path = (root / "config.json").string();
    std::ofstream(cfg_path) << config.dump(2);

    const std::vector<std::string> subcommands = {"gen-data", "train",    "fit-cav", "fit-probe",        "correct",
                                                  "evaluate", "sweep",    "toy3d",   "export-histograms"};
    std::size_t identical = 0;
    std::string failures;
    for (const auto& sub : subcommands) {
        std::vector<std::string> outputs;
        bool ran = true;
        for (int run = 0; run < 2; ++run) {
            const std::string out = (root / (sub + "_" + std::to_string(run))).string();
            std::vector<std::string> args = {sub, "--config", cfg_path, "--seed", "5", "--out", out};
            if (sub == "correct" || sub == "evaluate") {
                args.push_back("--mode");
                args.push_back("rclarc-both");
            }
            if (run_cli(args) != 0) ran = false;
            std::string all;
            for (const char* f : {"report.json", "run_manifest.json"}) all += testsupport::read_file(out + "/" + f);
            outputs.push_back(all);
        }
        if (ran && !outputs[0].empty() && outputs[0] == outputs[1]) {
            ++identical;
        } else {
            failures += " " + sub + (ran ? "(differs)" : "(failed)");
        }
    }
    fs::remove_all(root);
    return {identical == subcommands.size(), std::to_string(identical) + "/" + std::to_string(subcommands.size()) +
                                                 " subcommands byte-identical across two runs" + failures};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    double limit_seconds;  // 0 = none
};

}  // namespace

int main(int argc, char** argv) {
    set_warnings_enabled(false);
    const std::vector<Criterion> criteria = {
        {1, "projection matches constrained least-squares oracle", projection_oracle, 1.0},
        {2, "projection idempotence and constraint", projection_properties, 1.0},
        {3, "single and multi-artifact agree for one CAV", single_multi_consistency, 0.0},
        {4, "analytic gradients match finite differences", gradient_check_criterion, 5.0},
        {5, "toy3d reproduction", toy3d_reproduction, 120.0},
        {6, "reactive identity outside associated classes", reactivity_identity, 0.0},
        {7, "pattern CAV alignment exceeds filter CAV alignment", alignment_ordering, 0.0},
        {8, "shortcut sweep ordering", shortcut_sweep, 300.0},
        {9, "correction does not raise artifact relevance", relevance_reduction, 0.0},
        {10, "CLI determinism", cli_determinism, 0.0},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.limit_seconds > 0.0 && secs > c.limit_seconds) {
            o.pass = false;
            o.detail += "; exceeded time limit of " + num(c.limit_seconds) + " s";
        }
        std::printf("[%s] criterion %d: %s (%.2f s) -- %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                    o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
