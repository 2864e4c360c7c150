#include "test_util.hpp"

#include "rclarc/metrics.hpp"
#include "rclarc/synthdata.hpp"

#include <cmath>
#include <filesystem>

using namespace rclarc;

namespace {

SynthConfig small_backdoor() {
    SynthConfig c;
    c.samples_per_class = 200;
    c.test_per_class = 20;
    return c;
}

SynthConfig small_shortcut() {
    SynthConfig c;
    c.n_classes = 4;
    c.input_dim = 40;
    c.samples_per_class = 200;
    c.artifact_count = 5;
    c.poison_fraction = 0.5;
    c.label_flip_fraction = 0.0;
    c.background_magnitude = 4.0;
    c.test_per_class = 20;
    return c;
}

std::size_t count_flagged(const LabeledDataset& d, bool non_test_only) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (non_test_only && d.splits[i] == Split::Test) continue;
        n += d.is_clean(i) ? 0 : 1;
    }
    return n;
}

}  // namespace

TEST_CASE("toy3d groups") {
    const LabeledDataset d = gen_toy3d(3);
    REQUIRE(d.size() == 2000);
    CHECK(d.input_dim() == 3);
    CHECK(d.indices(Split::Test).size() == 400);
    struct Group {
        Vector mean;
        double sd;
        std::function<bool(std::size_t)> member;
    };
    const std::vector<Group> groups = {
        {{0, 8, 0}, 1.0, [&](std::size_t i) { return d.labels[i] == 0 && d.is_clean(i); }},
        {{1, 8, 8}, 1.0, [&](std::size_t i) { return d.has_flag(i, "artifact_1"); }},
        {{1, 1, 8}, 1.0, [&](std::size_t i) { return d.has_flag(i, "artifact_2"); }},
        {{6, 1, 1}, std::sqrt(1.8), [&](std::size_t i) { return d.labels[i] == 1; }},
    };
    for (const auto& g : groups) {
        const auto ids = d.select(g.member);
        REQUIRE(ids.size() == 500);
        for (std::size_t j = 0; j < 3; ++j) {
            double mean = 0.0;
            for (std::size_t i : ids) mean += d.samples(i, j) / 500.0;
            CHECK(std::fabs(mean - g.mean[j]) <= 3.0 * g.sd / std::sqrt(500.0));
        }
    }
}

TEST_CASE("generators are deterministic per seed") {
    CHECK(gen_toy3d(4).samples == gen_toy3d(4).samples);
    CHECK_FALSE(gen_toy3d(4).samples == gen_toy3d(5).samples);
    const auto a = gen_shortcut(small_shortcut());
    const auto b = gen_shortcut(small_shortcut());
    CHECK(a.samples == b.samples);
    CHECK(a.artifact_flags == b.artifact_flags);
}

TEST_CASE("backdoor poisoning and flips") {
    SynthConfig c = small_backdoor();
    const LabeledDataset d = gen_backdoor(c);
    CHECK_NOTHROW(d.validate());
    CHECK(count_flagged(d, true) == 66);
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.splits[i] != Split::Test && !d.is_clean(i)) flipped += d.labels[i] == 1 ? 1 : 0;
    }
    CHECK(flipped == 66);

    c.poison_fraction = 0.0;
    c.label_flip_fraction = 0.0;
    CHECK(count_flagged(gen_backdoor(c), true) == 0);

    c = small_backdoor();
    c.label_flip_fraction = 0.5;
    const LabeledDataset half = gen_backdoor(c);
    flipped = 0;
    for (std::size_t i = 0; i < half.size(); ++i) {
        if (half.splits[i] != Split::Test && !half.is_clean(i)) flipped += half.labels[i] == 1 ? 1 : 0;
    }
    CHECK(flipped == 33);
}

TEST_CASE("backdoor test split pairs clean samples with artifact copies") {
    const LabeledDataset d = gen_backdoor(small_backdoor());
    const auto test = d.indices(Split::Test);
    CHECK(test.size() == 80);
    std::size_t flagged = 0;
    for (std::size_t i : test) flagged += d.is_clean(i) ? 0 : 1;
    CHECK(flagged == 40);
}

TEST_CASE("artifact changes only its mask") {
    const LabeledDataset d = gen_shortcut(small_shortcut());
    const auto row = d.samples.row(0);
    for (const auto& id : d.concept_ids()) {
        const Vector x = d.with_artifact(row, id);
        const auto& mask = d.masks.at(id).indices;
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (!mask.count(j)) CHECK(x[j] == row[j]);
        }
    }
    const LabeledDataset b = gen_backdoor(small_backdoor());
    const auto brow = b.samples.row(0);
    const Vector y = b.with_artifact(brow, "artifact");
    double shift = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) shift += (y[j] - brow[j]) * (y[j] - brow[j]);
    CHECK(std::sqrt(shift) == doctest::Approx(4.0));
    CHECK_ERROR_CODE(b.with_artifact(brow, "nope"), ErrorCode::ConceptUnknown);
}

TEST_CASE("shortcut flag frequencies") {
    const SynthConfig c = small_shortcut();
    const LabeledDataset d = gen_shortcut(c);
    CHECK_NOTHROW(d.validate());
    CHECK(d.concept_ids().size() == 5);
    // Half of class 0 is poisoned, nothing else in the non-test splits.
    CHECK(count_flagged(d, true) == 100);
    std::size_t total_flags = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.splits[i] == Split::Test || d.is_clean(i)) continue;
        CHECK(d.labels[i] == 0);
        total_flags += d.artifact_flags[i].size();
    }
    // Subset sizes are uniform on 1..5, mean 3.
    CHECK(static_cast<double>(total_flags) / 100.0 == doctest::Approx(3.0).epsilon(0.2));
    CHECK(d.insertion == Insertion::Replace);
}

TEST_CASE("generator config validation") {
    SynthConfig c = small_shortcut();
    c.poison_fraction = 1.5;
    CHECK_ERROR_CODE(gen_shortcut(c), ErrorCode::ConfigError);
    c = small_shortcut();
    c.artifact_count = 20;
    CHECK_ERROR_CODE(gen_shortcut(c), ErrorCode::ConfigError);
    c = small_backdoor();
    c.n_classes = 1;
    CHECK_ERROR_CODE(gen_backdoor(c), ErrorCode::ConfigError);
    CHECK_ERROR_CODE(synth_config_from_json(nlohmann::json{{"n_classes", "two"}}), ErrorCode::ConfigError);
}

TEST_CASE("paired inputs differ exactly by the artifact") {
    const LabeledDataset d = gen_backdoor(small_backdoor());
    const InputPairs p = gen_paired_inputs(d, "artifact", 50, 1);
    REQUIRE(p.clean.size() == 50);
    const Vector& pattern = d.artifact_patterns.at("artifact");
    for (std::size_t k = 0; k < 50; ++k) {
        CHECK(d.is_clean(p.clean_ids[k]));
        CHECK(d.splits[p.clean_ids[k]] == Split::Train);
        for (std::size_t j = 0; j < pattern.size(); ++j) CHECK(p.poisoned[k][j] - p.clean[k][j] == doctest::Approx(pattern[j]));
    }
    CHECK_ERROR_CODE(gen_paired_inputs(d, "artifact", 0, 1), ErrorCode::InvalidArgument);
    CHECK_ERROR_CODE(gen_paired_inputs(d, "other", 5, 1), ErrorCode::ConceptUnknown);
}

TEST_CASE("pairs share the clean pool across concepts") {
    const LabeledDataset d = gen_shortcut(small_shortcut());
    const auto a = gen_paired_inputs(d, "artifact_0", 30, 2);
    const auto b = gen_paired_inputs(d, "artifact_3", 30, 2);
    CHECK(a.clean_ids == b.clean_ids);
}

TEST_CASE("dataset save and load round trip") {
    const LabeledDataset d = gen_shortcut(small_shortcut());
    const auto dir = std::filesystem::temp_directory_path() / "rclarc_dataset_roundtrip";
    std::filesystem::create_directories(dir);
    save_dataset(d, (dir / "d.jsonl").string(), (dir / "m.json").string());
    const LabeledDataset e = load_dataset((dir / "d.jsonl").string(), (dir / "m.json").string());
    CHECK(e.samples == d.samples);
    CHECK(e.labels == d.labels);
    CHECK(e.artifact_flags == d.artifact_flags);
    CHECK(e.splits == d.splits);
    CHECK(e.masks == d.masks);
    CHECK(e.artifact_patterns == d.artifact_patterns);
    CHECK(e.associated_classes == d.associated_classes);
    CHECK(e.insertion == d.insertion);
    CHECK_ERROR_CODE(load_dataset((dir / "missing.jsonl").string(), (dir / "m.json").string()), ErrorCode::IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("accuracy and macro F1") {
    const std::vector<std::size_t> truth = {0, 1, 0, 1};
    CHECK(accuracy_score(truth, truth) == 1.0);
    CHECK(macro_f1(truth, truth) == 1.0);
    const std::vector<std::size_t> constant = {0, 0, 0, 0};
    CHECK(accuracy_score(truth, constant) == 0.5);
    // Class 0: P = 0.5, R = 1, F1 = 2/3; class 1 never predicted: F1 = 0.
    CHECK(macro_f1(truth, constant) == doctest::Approx(1.0 / 3.0));
    const std::vector<std::size_t> none;
    CHECK_ERROR_CODE(accuracy_score(none, none), ErrorCode::EmptyTestSet);
    CHECK_ERROR_CODE(macro_f1(none, none), ErrorCode::EmptyTestSet);
    CHECK_ERROR_CODE(accuracy_score(truth, std::vector<std::size_t>{0}), ErrorCode::DimensionMismatch);
}
