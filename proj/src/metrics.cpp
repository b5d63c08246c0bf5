#include "blab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

namespace blab {

namespace {

double log_add_exp(double a, double b) {
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  return hi + std::log1p(std::exp(lo - hi));
}

// Strict weak order on models so (a, b) and (b, a) resolve to the same pair.
bool model_less(const VmfModel& a, const VmfModel& b) {
  if (a.kappa != b.kappa) return a.kappa < b.kappa;
  for (Index i = 0; i < a.mu.size(); ++i)
    if (a.mu(i) != b.mu(i)) return a.mu(i) < b.mu(i);
  return false;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

OverlapEstimate overlap_estimate(const VmfModel& a, const VmfModel& b, Index m,
                                 std::uint64_t seed) {
  require(a.dim() == b.dim(), ErrorKind::DimensionMismatch, "overlap_degree: models differ in d");
  require(m >= 1000, ErrorKind::InvalidArgument, "overlap_degree needs m >= 1000");
  const VmfModel& first = model_less(b, a) ? b : a;
  const VmfModel& second = model_less(b, a) ? a : b;
  const double log_ca = vmf_log_normalizer(first.dim(), first.kappa);
  const double log_cb = vmf_log_normalizer(second.dim(), second.kappa);

  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  Vector lw(m);
  for (Index i = 0; i < m; ++i) {
    const Vector y = coin(rng) ? sample_vmf(second, rng) : sample_vmf(first, rng);
    const double la = log_ca + first.kappa * first.mu.dot(y);
    const double lb = log_cb + second.kappa * second.mu.dot(y);
    lw(i) = 0.5 * (la + lb) - (std::log(0.5) + log_add_exp(la, lb));
  }
  const double mx = lw.maxCoeff();
  const Eigen::ArrayXd w = (lw.array() - mx).exp();
  const double mean = w.mean();
  const double var = (w - mean).square().sum() / static_cast<double>(m - 1);
  OverlapEstimate est;
  est.log_bc = mx + std::log(mean);
  est.std_error = std::sqrt(var / static_cast<double>(m)) / mean;
  return est;
}

double overlap_degree(const VmfModel& a, const VmfModel& b, Index m, std::uint64_t seed) {
  return overlap_estimate(a, b, m, seed).log_bc;
}

double overlap_on_points(const VmfModel& a, const VmfModel& b, const Eigen::Ref<const Matrix>& points) {
  require(a.dim() == b.dim() && points.cols() == a.dim(), ErrorKind::DimensionMismatch,
          "overlap_on_points: dimension");
  require(points.rows() >= 1, ErrorKind::InsufficientSamples, "overlap_on_points: no points");
  const double log_ca = vmf_log_normalizer(a.dim(), a.kappa);
  const double log_cb = vmf_log_normalizer(b.dim(), b.kappa);
  Vector lw(points.rows());
  for (Index i = 0; i < points.rows(); ++i) {
    const double la = log_ca + a.kappa * a.mu.dot(points.row(i).transpose());
    const double lb = log_cb + b.kappa * b.mu.dot(points.row(i).transpose());
    lw(i) = 0.5 * (la + lb);
  }
  const double mx = lw.maxCoeff();
  return mx + std::log((lw.array() - mx).exp().mean());
}

double OverlapMatrix::offdiag_mean() const {
  const Index C = values.rows();
  if (C < 2) return 0.0;
  double sum = 0.0;
  for (Index i = 0; i < C; ++i)
    for (Index j = 0; j < C; ++j)
      if (i != j) sum += values(i, j);
  return sum / static_cast<double>(C * (C - 1));
}

OverlapMatrix overlap_matrix(const Matrix& features, const std::vector<int>& labels,
                             int num_classes, const Classifier* clf, Index m, std::uint64_t seed,
                             OverlapEstimator estimator) {
  require(static_cast<Index>(labels.size()) == features.rows(), ErrorKind::DimensionMismatch,
          "overlap_matrix: one label per row");
  if (estimator == OverlapEstimator::ImportanceSampled)
    require(m >= 1000, ErrorKind::InvalidArgument, "overlap_matrix needs m >= 1000");

  OverlapMatrix out;
  out.mc_samples = m;
  out.seed = seed;

  // Unit features per class.
  std::vector<std::vector<Vector>> per_class(num_classes);
  for (Index i = 0; i < features.rows(); ++i) {
    const int y = labels[i];
    require(y >= 0 && y < num_classes, ErrorKind::IndexOutOfRange, "overlap_matrix: label");
    Vector z = clf ? blab::features(*clf, features.row(i).transpose())
                   : Vector(features.row(i).transpose());
    const double norm = z.norm();
    if (norm < 1e-12) {
      require(clf != nullptr, ErrorKind::ZeroFeatureVector,
              "overlap_matrix: row " + std::to_string(i) + " is zero");
      ++out.dropped_rows;
      continue;
    }
    per_class[y].push_back(z / norm);
  }
  std::vector<Matrix> unit(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    require(per_class[c].size() >= 2, ErrorKind::InsufficientSamples,
            "overlap_matrix: class " + std::to_string(c) + " has fewer than 2 usable samples");
    unit[c].resize(static_cast<Index>(per_class[c].size()), per_class[c].front().size());
    for (std::size_t i = 0; i < per_class[c].size(); ++i)
      unit[c].row(static_cast<Index>(i)) = per_class[c][i].transpose();
    out.models.push_back(fit_vmf(unit[c]));
  }

  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < num_classes; ++a)
    for (int b = a; b < num_classes; ++b) pairs.emplace_back(a, b);
  std::vector<double> values(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t p) {
    const auto [a, b] = pairs[p];
    if (estimator == OverlapEstimator::ImportanceSampled) {
      values[p] = overlap_degree(out.models[a], out.models[b], m,
                                 derive_seed(seed, {static_cast<std::uint64_t>(a),
                                                    static_cast<std::uint64_t>(b)}));
    } else {
      Matrix pooled(unit[a].rows() + (a == b ? 0 : unit[b].rows()), unit[a].cols());
      pooled.topRows(unit[a].rows()) = unit[a];
      if (a != b) pooled.bottomRows(unit[b].rows()) = unit[b];
      values[p] = overlap_on_points(out.models[a], out.models[b], pooled);
    }
  });
  out.values.resize(num_classes, num_classes);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [a, b] = pairs[p];
    out.values(a, b) = out.values(b, a) = values[p];
  }
  return out;
}

std::vector<double> default_lambdas() { return {2.5, 2.625, 2.75, 2.875, 3.0}; }

OutlierReport outlier_rate(const Matrix& features, const std::vector<int>& labels, int num_classes,
                           const std::vector<double>& lambdas,
                           const std::optional<GroupSplit>& groups) {
  require(static_cast<Index>(labels.size()) == features.rows(), ErrorKind::DimensionMismatch,
          "outlier_rate: one label per row");
  require(!lambdas.empty(), ErrorKind::InvalidArgument, "outlier_rate: empty lambda sweep");
  OutlierReport report;
  report.lambdas = lambdas;

  std::vector<std::vector<Index>> rows(num_classes);
  for (Index i = 0; i < features.rows(); ++i) {
    require(labels[i] >= 0 && labels[i] < num_classes, ErrorKind::IndexOutOfRange,
            "outlier_rate: label");
    rows[labels[i]].push_back(i);
  }

  report.classes.resize(num_classes);
  parallel_for(static_cast<std::size_t>(num_classes), [&](std::size_t ci) {
    const int c = static_cast<int>(ci);
    ClassOutliers& co = report.classes[c];
    co.cls = c;
    const auto& idx = rows[c];
    const Index n = static_cast<Index>(idx.size());
    co.count = n;
    if (n < 3) {
      co.skipped = true;
      return;
    }
    Vector nn = Vector::Constant(n, std::numeric_limits<double>::infinity());
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) {
        const double dist = (features.row(idx[i]) - features.row(idx[j])).norm();
        nn(i) = std::min(nn(i), dist);
        nn(j) = std::min(nn(j), dist);
      }
    co.mean_nn = nn.mean();
    co.std_nn = std::sqrt((nn.array() - co.mean_nn).square().mean());
    const bool degenerate = co.std_nn <= 1e-12 * std::max(1.0, co.mean_nn);
    for (double lambda : lambdas) {
      std::vector<bool> flag(n, false);
      Index hits = 0;
      if (!degenerate) {
        for (Index i = 0; i < n; ++i) {
          flag[i] = std::abs(nn(i) - co.mean_nn) / co.std_nn > lambda;
          hits += flag[i];
        }
      }
      co.eta.push_back(static_cast<double>(hits) / static_cast<double>(n));
      co.flags.push_back(std::move(flag));
    }
    double s = 0.0;
    for (double e : co.eta) s += e;
    co.eta_mean = s / static_cast<double>(co.eta.size());
  });

  auto group_mean = [&](const std::vector<int>& cls) {
    double s = 0.0;
    int k = 0;
    for (int c : cls)
      if (!report.classes[c].skipped) {
        s += report.classes[c].eta_mean;
        ++k;
      }
    return k ? s / k : 0.0;
  };
  std::vector<int> all(num_classes);
  for (int c = 0; c < num_classes; ++c) all[c] = c;
  report.groups.overall = group_mean(all);
  if (groups) {
    report.groups.head = group_mean(groups->head);
    report.groups.med = group_mean(groups->med);
    report.groups.tail = group_mean(groups->tail);
  }
  return report;
}

const char* to_string(GuidanceMode mode) {
  return mode == GuidanceMode::Standard ? "standard" : "modified";
}

const ConfidenceRow& ConfidenceReport::find(const std::string& group, GuidanceMode mode,
                                            double s) const {
  for (const ConfidenceRow& r : rows)
    if (r.group == group && r.mode == mode && r.s == s) return r;
  throw Error(ErrorKind::EmptyGroup, "no confidence row for group " + group);
}

ConfidenceReport generation_confidence(const Classifier& clf, const std::vector<GeneratedSet>& sets,
                                       const GroupSplit& groups) {
  auto group_of = [&](int c) -> std::string {
    auto has = [c](const std::vector<int>& g) { return std::find(g.begin(), g.end(), c) != g.end(); };
    if (has(groups.head)) return "head";
    if (has(groups.med)) return "med";
    if (has(groups.tail)) return "tail";
    throw Error(ErrorKind::IndexOutOfRange, "class " + std::to_string(c) + " not in any group");
  };

  struct Acc {
    double conf = 0.0, cred = 0.0;
    Index n = 0;
  };
  // Keyed by (mode, s, group) with a fixed group order for deterministic output.
  std::map<std::tuple<int, double, int>, Acc> acc;
  const std::vector<std::string> names = {"head", "med", "tail", "all"};
  auto group_index = [&](const std::string& g) {
    return static_cast<int>(std::find(names.begin(), names.end(), g) - names.begin());
  };

  for (const GeneratedSet& set : sets) {
    if (set.mode == GuidanceMode::Modified)
      require(set.y_disturb.has_value(), ErrorKind::InvalidArgument, "modified set needs y_d");
    const Matrix L = batch_logits(clf, set.samples);
    const int g = group_index(group_of(set.y_target));
    for (Index i = 0; i < L.rows(); ++i) {
      const Vector l = L.row(i).transpose();
      const Vector p = softmax(l);
      int y_d;
      if (set.mode == GuidanceMode::Modified) {
        y_d = *set.y_disturb;
      } else {
        y_d = topk_confusable(l, 2, std::nullopt)[1];
      }
      const double conf = l(set.y_target);
      const double cred = credibility_from_probs(p, y_d);
      for (int key : {g, 3}) {
        Acc& a = acc[{static_cast<int>(set.mode), set.s, key}];
        a.conf += conf;
        a.cred += cred;
        ++a.n;
      }
    }
  }

  ConfidenceReport report;
  for (const auto& [key, a] : acc) {
    const auto& [mode, s, g] = key;
    require(a.n > 0, ErrorKind::EmptyGroup, "empty confidence group");
    ConfidenceRow row;
    row.group = names[g];
    row.mode = static_cast<GuidanceMode>(mode);
    row.s = s;
    row.mean_conf = a.conf / static_cast<double>(a.n);
    row.mean_cred = a.cred / static_cast<double>(a.n);
    row.count = a.n;
    report.rows.push_back(row);
  }
  return report;
}

void write_overlap_csv(const OverlapMatrix& m, const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "class";
  for (Index j = 0; j < m.values.cols(); ++j) out << ',' << j;
  out << '\n';
  for (Index i = 0; i < m.values.rows(); ++i) {
    out << i;
    for (Index j = 0; j < m.values.cols(); ++j) out << ',' << format_double(m.values(i, j));
    out << '\n';
  }
}

void write_outlier_csv(const OutlierReport& r, const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "class,lambda,mean_nn,std_nn,eta\n";
  for (const ClassOutliers& co : r.classes) {
    if (co.skipped) continue;
    for (std::size_t k = 0; k < r.lambdas.size(); ++k)
      out << co.cls << ',' << format_double(r.lambdas[k]) << ',' << format_double(co.mean_nn)
          << ',' << format_double(co.std_nn) << ',' << format_double(co.eta[k]) << '\n';
  }
}

void write_confidence_csv(const ConfidenceReport& r, const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "group,mode,s,mean_conf,mean_cred\n";
  for (const ConfidenceRow& row : r.rows)
    out << row.group << ',' << to_string(row.mode) << ',' << format_double(row.s) << ','
        << format_double(row.mean_conf) << ',' << format_double(row.mean_cred) << '\n';
}

}  // namespace blab
