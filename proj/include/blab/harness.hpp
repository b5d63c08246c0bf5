#pragma once

#include "blab/classifier.hpp"
#include "blab/dbg.hpp"
#include "blab/diffusion.hpp"
#include "blab/metrics.hpp"
#include "blab/synth_data.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace blab {

struct DatasetBlock {
  LongTailParams params;
  int test_per_class = 100;
};

struct DiffusionBlock {
  int T = 100;
  // Unset means the 1000-step linear range rescaled to T.
  std::optional<double> beta_start;
  std::optional<double> beta_end;

  NoiseSchedule schedule() const;
};

struct MetricsBlock {
  Index mc_samples = 20000;
  std::vector<double> lambdas = default_lambdas();
  OverlapEstimator estimator = OverlapEstimator::ImportanceSampled;
  int gen_per_class = 100;  // samples per generation cell
  std::vector<double> guidance_scales{0.5, 1.0, 1.5};
};

struct CompareBlock {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double h2t_scale = 0.5;  // modified-CFG scale of the head-to-tail arm
};

struct ExperimentConfig {
  DatasetBlock dataset;
  TrainConfig train;
  DiffusionBlock diffusion;
  DbgConfig dbg;
  MetricsBlock metrics;
  CompareBlock compare;
  std::uint64_t seed = 0;
  std::filesystem::path output = "out";

  /// Sets the top-level seed and re-derives every block seed from it.
  void reseed(std::uint64_t s);
  nlohmann::ordered_json to_json() const;
  /// FNV-1a of the canonical JSON dump.
  std::string hash() const;
};

/// Throws Config errors naming the offending key path, e.g. "dbg.a_min".
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);
std::string file_hash(const std::filesystem::path& path);

void save_mixture(const MixtureSpec& spec, const std::filesystem::path& path);
MixtureSpec load_mixture(const std::filesystem::path& path);

/// Seed streams derived from an experiment seed.
namespace stream {
inline constexpr std::uint64_t kDataset = 1;
inline constexpr std::uint64_t kTrain = 2;
inline constexpr std::uint64_t kDbg = 3;
inline constexpr std::uint64_t kOverlap = 4;
inline constexpr std::uint64_t kTest = 5;
inline constexpr std::uint64_t kBalanced = 6;
inline constexpr std::uint64_t kGeneration = 7;
inline constexpr std::uint64_t kHeadToTail = 8;
}  // namespace stream

/// Everything an arm comparison needs for one seed.
struct ArmResult {
  std::string arm;
  double head = 0.0, med = 0.0, tail = 0.0, overall = 0.0;
  OverlapMatrix overlap;
  OutlierReport outliers;
};

struct SeedComparison {
  std::uint64_t seed = 0;
  std::vector<ArmResult> arms;  // balanced, A, B, C
  DbgSummary dbg;
  std::vector<GenerationRecord> dbg_records;
  const ArmResult& arm(const std::string& name) const;
};

/// Balanced control plus arms A (long-tailed D), B (D plus head-to-tail
/// modified-CFG samples) and C (DBG-augmented D), scored on one balanced test
/// set drawn from its own seed stream.
SeedComparison compare_seed(const ExperimentConfig& cfg);

/// Per-class generations under standard and modified CFG, scored by a
/// classifier trained on a balanced draw of the same mixture. Each target is
/// paired with every head class as the disturbing class; all cells of one
/// (s, target) share the starting noise.
ConfidenceReport confidence_report(const ExperimentConfig& cfg, const MixtureSpec& spec,
                                   const std::vector<int>& class_counts,
                                   const Classifier& balanced_clf);
Classifier train_balanced(const ExperimentConfig& cfg, const MixtureSpec& spec);

struct Manifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> files;  // relative path, hash
};

Manifest read_manifest(const std::filesystem::path& path);

/// The subcommands. Each writes into `out` and returns the manifest it wrote.
Manifest cmd_gen(const ExperimentConfig& cfg, const std::filesystem::path& out);
Manifest cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out);
Manifest cmd_metrics(const ExperimentConfig& cfg, const std::filesystem::path& out);
Manifest cmd_dbg(const ExperimentConfig& cfg, const std::filesystem::path& out);
Manifest cmd_compare(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// Process exit code for an error kind: 2 config, 3 missing dependency,
/// 4 numeric failure, 1 anything else.
int exit_code(ErrorKind kind);

}  // namespace blab
