#pragma once

#include "blab/classifier.hpp"
#include "blab/core.hpp"
#include "blab/diffusion.hpp"
#include "blab/synth_data.hpp"
#include "blab/vmf.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace blab {

/// log-BC estimate with its delta-method standard error.
struct OverlapEstimate {
  double log_bc = 0.0;
  double std_error = 0.0;
};

/// Importance-sampled log Bhattacharyya coefficient between two vMF models:
/// m draws from 0.5 (p_a + p_b), averaging sqrt(p_a p_b) / q. The two models
/// are put in a canonical order first, so swapping arguments gives the same
/// draws and the same value.
OverlapEstimate overlap_estimate(const VmfModel& a, const VmfModel& b, Index m,
                                 std::uint64_t seed);
double overlap_degree(const VmfModel& a, const VmfModel& b, Index m, std::uint64_t seed);

/// Plain average of sqrt(p_a p_b) over a fixed point set (e.g. pooled features).
double overlap_on_points(const VmfModel& a, const VmfModel& b, const Eigen::Ref<const Matrix>& points);

enum class OverlapEstimator { ImportanceSampled, PooledFeatures };

struct OverlapMatrix {
  Matrix values;
  Index mc_samples = 0;
  std::uint64_t seed = 0;
  std::vector<VmfModel> models;
  /// Rows dropped because their feature vector was zero.
  Index dropped_rows = 0;

  /// Mean over off-diagonal entries.
  double offdiag_mean() const;
};

/// Fits one vMF per class on unit features (classifier features z~ when a
/// classifier is given, otherwise the L2-normalized input rows) and fills every
/// pair, the diagonal included. Pair (a, b) uses derive_seed(seed, {min, max}).
OverlapMatrix overlap_matrix(const Matrix& features, const std::vector<int>& labels,
                             int num_classes, const Classifier* clf, Index m, std::uint64_t seed,
                             OverlapEstimator estimator = OverlapEstimator::ImportanceSampled);

/// Five thresholds uniformly spaced in [2.5, 3.0].
std::vector<double> default_lambdas();

struct ClassOutliers {
  int cls = 0;
  Index count = 0;
  bool skipped = false;  // fewer than 3 samples
  double mean_nn = 0.0;
  double std_nn = 0.0;
  std::vector<double> eta;  // one per lambda
  double eta_mean = 0.0;    // mean over the lambda sweep
  /// Per-sample outlier flags at each lambda (row order of the class).
  std::vector<std::vector<bool>> flags;
};

struct GroupRates {
  double head = 0.0;
  double med = 0.0;
  double tail = 0.0;
  double overall = 0.0;
};

struct OutlierReport {
  std::vector<double> lambdas;
  std::vector<ClassOutliers> classes;
  GroupRates groups;
};

/// Within-class nearest-neighbour outlier rates over raw features. Distances
/// are standardized by the class mean and population std; a zero std marks no
/// outliers. Group aggregates average eta_mean over evaluated classes.
OutlierReport outlier_rate(const Matrix& features, const std::vector<int>& labels, int num_classes,
                           const std::vector<double>& lambdas,
                           const std::optional<GroupSplit>& groups = std::nullopt);

/// A batch of generated samples for one (mode, s, target) cell.
struct GeneratedSet {
  GuidanceMode mode = GuidanceMode::Standard;
  double s = 1.0;
  int y_target = 0;
  /// Disturbing class for modified mode; ignored in standard mode, where the
  /// runner-up prediction plays that role.
  std::optional<int> y_disturb;
  Matrix samples;
};

struct ConfidenceRow {
  std::string group;  // head | med | tail | all
  GuidanceMode mode = GuidanceMode::Standard;
  double s = 0.0;
  double mean_conf = 0.0;
  double mean_cred = 0.0;
  Index count = 0;
};

struct ConfidenceReport {
  std::vector<ConfidenceRow> rows;

  const ConfidenceRow& find(const std::string& group, GuidanceMode mode, double s) const;
};

/// Per-group means of Conf (target logit) and Cred (p_(1) - p_(d)).
ConfidenceReport generation_confidence(const Classifier& balanced_clf,
                                       const std::vector<GeneratedSet>& sets,
                                       const GroupSplit& groups);

const char* to_string(GuidanceMode mode);

void write_overlap_csv(const OverlapMatrix& m, const std::filesystem::path& path);
void write_outlier_csv(const OutlierReport& r, const std::filesystem::path& path);
void write_confidence_csv(const ConfidenceReport& r, const std::filesystem::path& path);

}  // namespace blab
