#include "doctest.h"

#include "blab/harness.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace blab;
namespace fs = std::filesystem;

namespace {

// A configuration small enough for unit tests.
nlohmann::json tiny_config() {
  return nlohmann::json::parse(R"({
    "seed": 3,
    "dataset": {"classes": 4, "dim": 2, "n_max": 60, "ratio": 10, "sep": 2.0, "test_per_class": 20},
    "train": {"epochs": 8, "hidden": 16},
    "diffusion": {"T": 50},
    "metrics": {"mc_samples": 1000, "gen_per_class": 5, "guidance_scales": [1.0]},
    "compare": {"seeds": [1]}
  })");
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("blab_harness_" + name);
  fs::remove_all(p);
  return p;
}

ErrorKind kind_of(const nlohmann::json& j) {
  try {
    parse_config(j);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::InvalidArgument;
}

std::string message_of(const nlohmann::json& j) {
  try {
    parse_config(j);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("defaults") {
    const ExperimentConfig cfg = parse_config(nlohmann::json::object());
    CHECK(cfg.dataset.params.classes == 10);
    CHECK(cfg.dataset.params.ratio == 100.0);
    CHECK(cfg.dbg.w == 3.0);
    CHECK(cfg.metrics.lambdas.size() == 5);
    CHECK(cfg.compare.seeds.size() == 5);
  }
  SUBCASE("unknown keys name their path") {
    nlohmann::json j = tiny_config();
    j["dbg"]["colour"] = 1;
    CHECK(kind_of(j) == ErrorKind::Config);
    CHECK(message_of(j).find("dbg.colour") != std::string::npos);
    nlohmann::json top = tiny_config();
    top["extra"] = true;
    CHECK(message_of(top).find("extra") != std::string::npos);
  }
  SUBCASE("type and range errors") {
    nlohmann::json j = tiny_config();
    j["dataset"]["classes"] = 2.5;
    CHECK(message_of(j).find("dataset.classes") != std::string::npos);
    j = tiny_config();
    j["dbg"]["a_min"] = 0.95;
    CHECK(kind_of(j) == ErrorKind::Config);
    j = tiny_config();
    j["diffusion"]["T"] = 15;
    CHECK(message_of(j).find("diffusion.T") != std::string::npos);
    j = tiny_config();
    j["metrics"]["estimator"] = "magic";
    CHECK(message_of(j).find("metrics.estimator") != std::string::npos);
    j = tiny_config();
    j["compare"]["seeds"] = {1, -2};
    CHECK(message_of(j).find("compare.seeds[1]") != std::string::npos);
  }
  SUBCASE("infinite filter ratios") {
    nlohmann::json j = tiny_config();
    j["dbg"]["l"] = "inf";
    CHECK(std::isinf(parse_config(j).dbg.l));
  }
  SUBCASE("reseeding changes the hash and every block seed") {
    ExperimentConfig a = parse_config(tiny_config());
    ExperimentConfig b = a;
    b.reseed(4);
    CHECK(a.hash() != b.hash());
    CHECK(a.train.seed != b.train.seed);
    CHECK(a.dbg.seed != b.dbg.seed);
    CHECK(a.dataset.params.seed != b.dataset.params.seed);
    b.reseed(3);
    CHECK(a.hash() == b.hash());
  }
}

TEST_CASE("hashing") {
  CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
}

TEST_CASE("subcommands") {
  const ExperimentConfig cfg = parse_config(tiny_config());
  const fs::path out = scratch("pipeline");

  CHECK_THROWS_AS(cmd_train(cfg, out), Error);
  try {
    cmd_metrics(cfg, out);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingDependency);
  }

  const Manifest gen = cmd_gen(cfg, out);
  CHECK(gen.files.size() == 3);
  try {
    cmd_metrics(cfg, out);
    FAIL("metrics ran without a checkpoint");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingDependency);
    CHECK(std::string(e.what()).find("classifier.json") != std::string::npos);
  }

  const Manifest train = cmd_train(cfg, out);
  const Manifest metrics = cmd_metrics(cfg, out);
  CHECK(fs::exists(out / "scatter.csv"));
  const Manifest dbg = cmd_dbg(cfg, out);

  SUBCASE("manifests list every file with its hash") {
    for (const Manifest* m : {&gen, &train, &metrics, &dbg}) {
      const Manifest back = read_manifest(out / (m->command + ".manifest.json"));
      CHECK(back.config_hash == cfg.hash());
      CHECK(back.seed == cfg.seed);
      REQUIRE(back.files.size() == m->files.size());
      for (const auto& [path, hash] : back.files) CHECK(file_hash(out / path) == hash);
    }
  }

  SUBCASE("re-running reproduces every artifact") {
    const fs::path again = scratch("pipeline_again");
    CHECK(cmd_gen(cfg, again).files == gen.files);
    CHECK(cmd_train(cfg, again).files == train.files);
    CHECK(cmd_metrics(cfg, again).files == metrics.files);
    CHECK(cmd_dbg(cfg, again).files == dbg.files);
    fs::remove_all(again);
  }

  SUBCASE("records replay to the same verdicts") {
    const LabeledDataset data = load_dataset(out / "train.jsonl");
    const Classifier clf = load_classifier(out / "classifier.json");
    const PrototypeBank bank = build_prototypes(clf, data);
    const std::vector<GenerationRecord> records = read_records(out / "records.jsonl");
    CHECK(records.size() == static_cast<std::size_t>(data.size()));
    for (const GenerationRecord& r : records)
      CHECK(filter_record(bank, clf, r, r.threshold, cfg.dbg) == r.verdict);
    const LabeledDataset augmented = load_dataset(out / "augmented.jsonl");
    CHECK(augmented.size() >= data.size());
  }
  fs::remove_all(out);
}

TEST_CASE("compare on a balanced mixture") {
  nlohmann::json j = tiny_config();
  j["dataset"]["ratio"] = 1;
  const ExperimentConfig cfg = parse_config(j);
  const fs::path out = scratch("compare");
  const Manifest m = cmd_compare(cfg, out);
  CHECK(m.files.size() == 2 + 8);
  const SeedComparison run = [&] {
    ExperimentConfig c = cfg;
    c.reseed(1);
    return compare_seed(c);
  }();
  CHECK(run.arms.size() == 4);
  // With no tail deficit the head-to-tail arm trains on D itself.
  CHECK(run.arm("B").overall == run.arm("A").overall);
  for (const ArmResult& a : run.arms) {
    CHECK(a.overall >= 0.0);
    CHECK(a.overall <= 1.0);
  }
  fs::remove_all(out);
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  const fs::path good = dir / "good.json";
  std::ofstream(good) << tiny_config().dump();
  nlohmann::json badj = tiny_config();
  badj["train"]["epoch"] = 3;
  const fs::path bad = dir / "bad.json";
  std::ofstream(bad) << badj.dump();
  nlohmann::json divj = tiny_config();
  divj["train"]["learning_rate"] = 1e200;
  const fs::path diverge = dir / "diverge.json";
  std::ofstream(diverge) << divj.dump();

  const std::string out = (dir / "out").string();
  CHECK(run_cli("train --config " + good.string() + " --out " + out) == 3);
  CHECK(run_cli("gen --config " + bad.string() + " --out " + out) == 2);
  CHECK(run_cli("gen --config " + (dir / "missing.json").string() + " --out " + out) == 2);
  CHECK(run_cli("gen --out " + out) == 2);
  CHECK(run_cli("gen --config " + good.string() + " --out " + out + " --seed 9") == 0);
  CHECK(read_manifest(dir / "out" / "gen.manifest.json").seed == 9);
  CHECK(run_cli("train --config " + diverge.string() + " --out " + out) == 4);
  fs::remove_all(dir);
}
