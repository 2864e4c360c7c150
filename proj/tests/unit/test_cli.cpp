#include "test_util.hpp"

#include "../support/helpers.hpp"

#include "rclarc/cli.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "rclarc_cli");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return rclarc::run_cli(static_cast<int>(argv.size()), argv.data());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& f) const { return (path / f).string(); }
};

std::string write_config(const TempDir& dir) {
    const nlohmann::json config = {
        {"dataset",
         {{"kind", "shortcut"},
          {"config",
           {{"n_classes", 3}, {"input_dim", 16}, {"samples_per_class", 60}, {"artifact_count", 2},
            {"mask_width", 3}, {"poison_fraction", 0.5}, {"test_per_class", 10}, {"background_magnitude", 2.0}}}}},
        {"model", {{"hidden", {10}}}},
        {"training", {{"epochs", 30}}},
        {"cav", {{"n_pairs", 40}}},
        {"evaluation", {{"relevance", false}}}};
    const std::string path = dir / "config.json";
    std::ofstream(path) << config.dump(2);
    return path;
}

}  // namespace

TEST_CASE("CLI exit codes") {
    TempDir dir("rclarc_cli_exit");
    CHECK(cli({"--help"}) == 0);
    CHECK(cli({"evaluate", "--bogus"}) == 1);
    CHECK(cli({}) == 1);
    CHECK(cli({"evaluate", "--mode", "magic"}) == 1);
    CHECK(cli({"evaluate", "--config", dir / "missing.json"}) == 1);

    std::ofstream(dir / "bad.json") << R"({"unknown_key": 1})";
    CHECK(cli({"gen-data", "--config", dir / "bad.json", "--out", dir / "o"}) == 1);
    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(cli({"gen-data", "--config", dir / "broken.json", "--out", dir / "o"}) == 1);
    // Missing upstream artifact is a runtime failure.
    const std::string cfg = write_config(dir);
    CHECK(cli({"fit-cav", "--config", cfg, "--model", dir / "nope.json", "--out", dir / "o"}) == 2);
    // correct needs a mode.
    CHECK(cli({"correct", "--config", cfg, "--out", dir / "o"}) != 0);
}

TEST_CASE("CLI stages reuse upstream artifacts") {
    TempDir dir("rclarc_cli_stages");
    const std::string cfg = write_config(dir);
    const std::vector<std::string> base = {"--config", cfg, "--seed", "2"};
    auto with = [&](std::vector<std::string> head, std::vector<std::string> tail) {
        head.insert(head.end(), base.begin(), base.end());
        head.insert(head.end(), tail.begin(), tail.end());
        return head;
    };

    REQUIRE(cli(with({"gen-data"}, {"--out", dir / "data"})) == 0);
    CHECK(fs::exists(dir / "data/dataset.jsonl"));
    CHECK(fs::exists(dir / "data/run_manifest.json"));
    const std::vector<std::string> data = {"--dataset", dir / "data/dataset.jsonl", "--manifest",
                                           dir / "data/dataset_manifest.json"};

    auto plus = [](std::vector<std::string> a, const std::vector<std::string>& b) {
        a.insert(a.end(), b.begin(), b.end());
        return a;
    };
    REQUIRE(cli(with({"train"}, plus({"--out", dir / "train"}, data))) == 0);
    const std::vector<std::string> model = plus(data, {"--model", dir / "train/model.json"});
    REQUIRE(cli(with({"fit-cav"}, plus({"--out", dir / "cav"}, model))) == 0);
    REQUIRE(cli(with({"fit-probe"}, plus({"--out", dir / "probe"}, model))) == 0);
    const std::vector<std::string> all =
        plus(model, {"--cavs", dir / "cav/cavs.json", "--probes", dir / "probe/probes"});
    REQUIRE(cli(with({"evaluate"}, plus({"--out", dir / "eval_reuse"}, all))) == 0);
    REQUIRE(cli(with({"evaluate"}, {"--out", dir / "eval_fresh"})) == 0);

    // Reusing the staged artifacts gives the same metrics as recomputing them.
    const auto reused = nlohmann::json::parse(testsupport::read_file(dir / "eval_reuse/report.json"));
    const auto fresh = nlohmann::json::parse(testsupport::read_file(dir / "eval_fresh/report.json"));
    CHECK(reused["evaluation"]["rows"] == fresh["evaluation"]["rows"]);
    CHECK(reused["evaluation"]["rows"].size() == 5);
    CHECK(fs::exists(dir / "eval_fresh/metrics.csv"));

    const auto manifest = nlohmann::json::parse(testsupport::read_file(dir / "eval_fresh/run_manifest.json"));
    CHECK(manifest["seed"] == 2);
    CHECK(manifest["subcommand"] == "evaluate");
    CHECK(manifest["config_hash"].get<std::string>().size() == 16);
}
