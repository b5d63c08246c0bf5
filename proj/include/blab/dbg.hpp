#pragma once

#include "blab/classifier.hpp"
#include "blab/core.hpp"
#include "blab/diffusion.hpp"
#include "blab/synth_data.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace blab {

struct DbgConfig {
  double w = 3.0;  // k = floor(C / w)
  double s = 0.5;  // guidance scale of the denoising pass
  double l = 0.02;
  double h = 0.05;
  double a_max = 0.9;
  double a_min = 0.5;
  int per_sample_count = 1;
  /// Scale candidates by min(10, round(n_max / n_c)) for the source class.
  bool tail_oversample = false;
  /// Overrides the T/10 source-conditioned noising steps.
  std::optional<int> noising_steps;
  /// Overrides the per-class credibility thresholds (mainly for testing).
  std::optional<double> fixed_threshold;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per class: unit prototype and the closed range of real-feature cosine
/// distances to it.
struct PrototypeBank {
  std::vector<Vector> prototype;
  std::vector<double> d_low;
  std::vector<double> d_high;
  std::vector<Index> count;

  int num_classes() const { return static_cast<int>(prototype.size()); }
};

PrototypeBank build_prototypes(const Classifier& clf, const LabeledDataset& dataset);

/// Cosine distance 1 - <z~(x), prototype_c>. A zero feature vector has cosine
/// similarity 0, i.e. distance 1.
double prototype_distance(const PrototypeBank& bank, const Classifier& clf,
                          const Eigen::Ref<const Vector>& x, int cls);

enum class Verdict { Accepted, RejectedProtoNear, RejectedProtoFar, RejectedConfCred };
const char* to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

enum class ProtoOutcome { Inside, Near, Far };

/// Accepts distance in [(1 - l) d_low, (1 + h) d_high] of class `cls`.
ProtoOutcome prototype_distance_filter(const PrototypeBank& bank, int cls, double distance,
                                       double l, double h);

struct GenerationRecord {
  Index source_index = 0;
  int candidate = 0;
  Vector x_source;
  int y_source = 0;
  int y_target = 0;
  Vector x_generated;
  double proto_distance = 0.0;
  double conf = 0.0;
  double cred = 0.0;
  int predicted_class = 0;
  double top_prob = 0.0;
  double threshold = 0.0;
  Verdict verdict = Verdict::Accepted;
};

/// a_c = a_max - (a_max - a_min) * rank / (C - 1), rank by descending count.
std::vector<double> class_thresholds(const std::vector<int>& class_counts, double a_max,
                                     double a_min);

/// True when the sample is kept: removal requires a prediction outside
/// {y_source, y_target} with p_(1) > a and Cred > a (runner-up as disturbing class).
bool confcred_filter(const Classifier& clf, const GenerationRecord& record, double a);

/// y~ = argmax of the logits over the top-k (k = floor(C / w)) classes,
/// excluding y0.
int select_target_label(const Classifier& clf, const Eigen::Ref<const Vector>& x0, int y0, int C,
                        double w);

struct NoisingResult {
  Vector x;
  int t = 0;  // index of the returned state
};

/// Pushes x0 to m = T/2 with a seeded draw, then K source-conditioned steps
/// that re-apply the closed-form forward map with the predicted noise:
/// x_{t+1} = sqrt(abar_{t+1}) x0_hat + sqrt(1 - abar_{t+1}) eps(x_t, y_sl, t).
NoisingResult conditional_noising(const GmmScoreModel& model, const NoiseSchedule& schedule,
                                  const Eigen::Ref<const Vector>& x0, int y_sl, std::uint64_t seed,
                                  std::optional<int> steps = std::nullopt);

/// Reverse CFG pass toward y~ from t = start down to 1; returns x0_hat.
Vector conditional_denoising(const GmmScoreModel& model, const NoiseSchedule& schedule,
                             const Eigen::Ref<const Vector>& x_noised, int start, int y_target,
                             double s);

struct DbgSummary {
  Index candidates = 0;
  Index accepted = 0;
  Index rejected_proto_near = 0;
  Index rejected_proto_far = 0;
  Index rejected_confcred = 0;
  std::vector<Index> accepted_per_class;  // by target label

  double acceptance_rate() const {
    return candidates ? static_cast<double>(accepted) / static_cast<double>(candidates) : 0.0;
  }
};

struct DbgResult {
  LabeledDataset augmented;
  std::vector<GenerationRecord> records;
  DbgSummary summary;
};

/// Both filters applied to an already generated record; pure in its inputs.
Verdict filter_record(const PrototypeBank& bank, const Classifier& clf,
                      const GenerationRecord& record, double a, const DbgConfig& cfg);

DbgSummary summarize(const std::vector<GenerationRecord>& records, int num_classes);

DbgResult run_dbg(const LabeledDataset& dataset, const Classifier& clf, const GmmScoreModel& model,
                  const NoiseSchedule& schedule, const DbgConfig& cfg);

void write_records(const std::vector<GenerationRecord>& records, const std::filesystem::path& path);
std::vector<GenerationRecord> read_records(const std::filesystem::path& path);

}  // namespace blab
