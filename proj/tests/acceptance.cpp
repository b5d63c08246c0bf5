// Acceptance run on the synthetic benchmark (C=10, d=8, n_max=500, ratio=100,
// seeds 0..4). Prints one PASS/FAIL line per criterion and exits non-zero when
// any criterion fails.

#include "blab/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

using namespace blab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Guards a criterion body so one crash does not take the others down.
Outcome guarded(const std::function<Outcome()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

ExperimentConfig benchmark_config() { return parse_config(nlohmann::json::object()); }

Outcome vmf_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  Vector mu(8);
  mu << 1, -2, 0.5, 3, 0, 1, -1, 2;
  mu.normalize();
  const Matrix draws = sample_vmf({mu, 20.0, false}, 5000, 2024);
  const VmfModel fit = fit_vmf(draws);
  const double secs = seconds_since(t0);
  const double dot = fit.mu.dot(mu);
  const double rel = std::abs(fit.kappa - 20.0) / 20.0;
  return {dot > 0.99 && rel < 0.15 && secs < 5.0,
          fmt("mu.mu* = %.5f (> 0.99), |kappa-20|/20 = %.4f (< 0.15), %.2fs (< 5s)", dot, rel, secs)};
}

Outcome overlap_identity(const ExperimentConfig& cfg) {
  const auto [data, spec] = make_longtail_mixture(cfg.dataset.params);
  const LabeledDataset test =
      sample_mixture(spec, std::vector<int>(10, cfg.dataset.test_per_class),
                     derive_seed(cfg.seed, {stream::kTest}));
  const Classifier clf = train(data, cfg.train);
  const auto t0 = std::chrono::steady_clock::now();
  const OverlapMatrix m = overlap_matrix(test.features, test.labels, 10, &clf, 20000, 99);
  const double secs = seconds_since(t0);
  const double worst_diag = m.values.diagonal().cwiseAbs().maxCoeff();
  const bool symmetric = (m.values.array() == m.values.transpose().array()).all();
  return {worst_diag <= 0.05 && symmetric && secs < 10.0,
          fmt("max |log-BC(c,c)| = %.4f (<= 0.05), exactly symmetric = %s, %.2fs (< 10s)",
              worst_diag, symmetric ? "yes" : "no", secs)};
}

Outcome overlap_oracle() {
  const double kappa = 10.0;
  auto c3 = [](double k) {
    return k == 0.0 ? 1.0 / (4.0 * std::numbers::pi) : k / (4.0 * std::numbers::pi * std::sinh(k));
  };
  const VmfModel a{Vector{{0.0, 0.0, 1.0}}, kappa, false};
  Outcome o;
  double previous = std::numeric_limits<double>::infinity();
  std::ostringstream detail;
  for (double deg : {0.0, 45.0, 90.0, 135.0, 180.0}) {
    const double th = deg * std::numbers::pi / 180.0;
    const VmfModel b{Vector{{std::sin(th), 0.0, std::cos(th)}}, kappa, false};
    const double exact = std::log(c3(kappa) / c3(0.5 * kappa * (a.mu + b.mu).norm()));
    const OverlapEstimate est = overlap_estimate(a, b, 20000, 5150 + static_cast<int>(deg));
    const double z = est.std_error > 0 ? std::abs(est.log_bc - exact) / est.std_error : 0.0;
    const bool within = std::abs(est.log_bc - exact) <= 3.0 * est.std_error + 1e-12;
    const bool monotone = est.log_bc < previous;
    o.pass = o.pass && within && monotone;
    previous = est.log_bc;
    detail << fmt("%g deg: %.4f vs %.4f (%.2f SE)%s; ", deg, est.log_bc, exact, z,
                  monotone ? "" : " NOT DECREASING");
  }
  o.detail = detail.str();
  return o;
}

bool eta_monotone(const OutlierReport& r) {
  for (const ClassOutliers& c : r.classes)
    for (std::size_t k = 1; k < c.eta.size(); ++k)
      if (c.eta[k] > c.eta[k - 1]) return false;
  return true;
}

Outcome outlier_calibration(const std::vector<SeedComparison>& runs) {
  Rng rng(404);
  Matrix clean(1000, 8);
  for (Index i = 0; i < 1000; ++i) clean.row(i) = standard_normal(rng, 8).transpose();
  const OutlierReport base = outlier_rate(clean, std::vector<int>(1000, 0), 1, default_lambdas());
  const double eta = base.classes[0].eta_mean;

  Matrix injected(1001, 8);
  injected.topRows(1000) = clean;
  injected.row(1000) = Vector::Constant(8, 100.0).transpose();
  const OutlierReport with = outlier_rate(injected, std::vector<int>(1001, 0), 1, default_lambdas());
  bool flagged = true;
  for (const auto& flags : with.classes[0].flags) flagged = flagged && flags[1000];

  bool monotone = eta_monotone(base) && eta_monotone(with);
  int reports = 2;
  for (const SeedComparison& run : runs)
    for (const ArmResult& a : run.arms) {
      monotone = monotone && eta_monotone(a.outliers);
      ++reports;
    }
  return {eta < 0.02 && flagged && monotone,
          fmt("clean mean eta = %.4f (< 0.02), 100-sigma point flagged at every lambda = %s, "
              "eta non-increasing in %d reports = %s",
              eta, flagged ? "yes" : "no", reports, monotone ? "yes" : "no")};
}

Outcome diffusion_exactness() {
  const NoiseSchedule s = default_schedule(100);
  Rng rng(7);
  double worst_round = 0.0;
  for (int t : {1, 50, 100}) {
    const Vector x0 = standard_normal(rng, 8) * 3.0;
    const Vector eps = standard_normal(rng, 8);
    const Vector back = denoise_step(forward_noise(x0, t, eps, s), t, eps, s).first;
    worst_round = std::max(worst_round, (back - x0).norm() / x0.norm());
  }

  LongTailParams p;
  p.seed = 5;
  const MixtureSpec spec = make_longtail_mixture(p).second;
  const GmmScoreModel model(spec);
  std::uniform_int_distribution<int> tdist(1, 100);
  double worst_score = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int t = tdist(rng);
    const Vector x = standard_normal(rng, 8) * 2.0;
    const std::optional<int> cond =
        i % 2 ? std::optional<int>(i % spec.num_classes()) : std::nullopt;
    Vector grad(8);
    for (int k = 0; k < 8; ++k) {
      const double h = 1e-5;
      Vector xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      grad(k) = (model.log_density(xp, cond, t, s) - model.log_density(xm, cond, t, s)) / (2 * h);
    }
    const Vector expected = -std::sqrt(1.0 - s.alpha_bar(t)) * grad;
    const Vector got = model.predict_noise(x, cond, t, s);
    worst_score = std::max(worst_score, (got - expected).norm() / std::max(expected.norm(), 1e-12));
  }
  return {worst_round <= 1e-9 && worst_score <= 1e-5,
          fmt("round-trip rel err = %.2e (<= 1e-9), score rel err = %.2e (<= 1e-5)", worst_round,
              worst_score)};
}

Outcome fig3_direction(const ExperimentConfig& base) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  std::ostringstream detail;
  int cells = 0, good = 0;
  for (std::uint64_t seed : base.compare.seeds) {
    ExperimentConfig cfg = base;
    cfg.reseed(seed);
    const auto [data, spec] = make_longtail_mixture(cfg.dataset.params);
    const Classifier balanced = train_balanced(cfg, spec);
    const ConfidenceReport r = confidence_report(cfg, spec, data.class_counts, balanced);
    for (double s : cfg.metrics.guidance_scales) {
      const ConfidenceRow& st = r.find("tail", GuidanceMode::Standard, s);
      const ConfidenceRow& mo = r.find("tail", GuidanceMode::Modified, s);
      const bool ok = mo.mean_conf < st.mean_conf && mo.mean_cred < st.mean_cred;
      ++cells;
      good += ok;
      if (!ok)
        detail << fmt("seed %llu s=%g conf %.3f/%.3f cred %.3f/%.3f; ",
                      static_cast<unsigned long long>(seed), s, mo.mean_conf, st.mean_conf,
                      mo.mean_cred, st.mean_cred);
    }
  }
  const double secs = seconds_since(t0);
  o.pass = good == cells && secs < 60.0;
  o.detail = fmt("tail-class Conf and Cred lower under modified CFG in %d/%d (seed, s) cells, "
                 "%.1fs (< 60s)",
                 good, cells, secs) +
             (detail.str().empty() ? "" : "; misses: " + detail.str());
  return o;
}

Outcome fig2_direction(const std::vector<SeedComparison>& runs) {
  int overlap_up = 0, outlier_up = 0, tail_drift = 0;
  std::ostringstream detail;
  for (const SeedComparison& run : runs) {
    const ArmResult& bal = run.arm("balanced");
    const ArmResult& a = run.arm("A");
    const ArmResult& b = run.arm("B");
    overlap_up += a.overlap.offdiag_mean() > bal.overlap.offdiag_mean();
    outlier_up += a.outliers.groups.overall > bal.outliers.groups.overall;
    tail_drift += b.outliers.groups.tail >= a.outliers.groups.tail;
    detail << fmt("[seed %llu ovl %.2f/%.2f out %.4f/%.4f tail-out B %.4f A %.4f] ",
                  static_cast<unsigned long long>(run.seed), a.overlap.offdiag_mean(),
                  bal.overlap.offdiag_mean(), a.outliers.groups.overall,
                  bal.outliers.groups.overall, b.outliers.groups.tail, a.outliers.groups.tail);
  }
  const int n = static_cast<int>(runs.size());
  const int need = n - 1;
  return {overlap_up >= need && outlier_up >= need && tail_drift >= need,
          fmt("overlap A > balanced in %d/%d, outlier overall A > balanced in %d/%d, "
              "tail outlier B >= A in %d/%d (need %d each) ",
              overlap_up, n, outlier_up, n, tail_drift, n, need) +
              detail.str()};
}

Outcome dbg_end_to_end(const std::vector<SeedComparison>& runs, double compare_secs) {
  double gain = 0.0, c_overlap = 0.0, b_overlap = 0.0;
  std::ostringstream detail;
  for (const SeedComparison& run : runs) {
    const ArmResult& a = run.arm("A");
    const ArmResult& b = run.arm("B");
    const ArmResult& c = run.arm("C");
    gain += c.tail - a.tail;
    c_overlap += c.overlap.offdiag_mean();
    b_overlap += b.overlap.offdiag_mean();
    detail << fmt("[seed %llu tail C %.3f A %.3f, ovl C %.2f B %.2f] ",
                  static_cast<unsigned long long>(run.seed), c.tail, a.tail,
                  c.overlap.offdiag_mean(), b.overlap.offdiag_mean());
  }
  const double n = static_cast<double>(runs.size());
  gain /= n;
  c_overlap /= n;
  b_overlap /= n;
  return {gain >= 0.01 && c_overlap <= b_overlap && compare_secs < 300.0,
          fmt("mean tail gain C - A = %+.2f points (>= 1), mean overlap C %.3f <= B %.3f, "
              "compare %.1fs (< 300s) ",
              100.0 * gain, c_overlap, b_overlap, compare_secs) +
              detail.str()};
}

Outcome filter_soundness(const std::vector<SeedComparison>& runs) {
  std::size_t records = 0, protected_records = 0, violations = 0;
  bool rate_ok = true;
  for (const SeedComparison& run : runs) {
    for (const GenerationRecord& r : run.dbg_records) {
      ++records;
      if (r.predicted_class == r.y_source || r.predicted_class == r.y_target) {
        ++protected_records;
        if (r.verdict == Verdict::RejectedConfCred) ++violations;
      }
    }
    const double rate = run.dbg.acceptance_rate();
    rate_ok = rate_ok && rate > 0.0 && rate < 1.0;
  }
  // Closed interval at both ends.
  PrototypeBank bank;
  bank.prototype.push_back(Vector{{1.0, 0.0}});
  bank.d_low.push_back(0.2);
  bank.d_high.push_back(0.4);
  bank.count.push_back(2);
  const double l = 0.02, h = 0.05;
  const bool closed =
      prototype_distance_filter(bank, 0, (1.0 - l) * 0.2, l, h) == ProtoOutcome::Inside &&
      prototype_distance_filter(bank, 0, (1.0 + h) * 0.4, l, h) == ProtoOutcome::Inside &&
      prototype_distance_filter(bank, 0, std::nextafter((1.0 - l) * 0.2, 0.0), l, h) ==
          ProtoOutcome::Near &&
      prototype_distance_filter(bank, 0, std::nextafter((1.0 + h) * 0.4, 1.0), l, h) ==
          ProtoOutcome::Far;
  return {violations == 0 && closed && rate_ok,
          fmt("%zu of %zu source/target-predicted records removed by confcred (of %zu records), "
              "interval closed at both ends = %s, acceptance rate in (0,1) every seed = %s",
              violations, protected_records, records, closed ? "yes" : "no",
              rate_ok ? "yes" : "no")};
}

Outcome determinism() {
  nlohmann::json j = nlohmann::json::object();
  j["compare"] = {{"seeds", {0}}};
  const ExperimentConfig cfg = parse_config(j);
  const fs::path root = fs::temp_directory_path() / "blab_acceptance_determinism";
  fs::remove_all(root);
  std::ostringstream detail;
  bool same = true;
  using Command = Manifest (*)(const ExperimentConfig&, const fs::path&);
  const std::vector<std::pair<std::string, Command>> commands{
      {"gen", &cmd_gen}, {"train", &cmd_train}, {"metrics", &cmd_metrics},
      {"dbg", &cmd_dbg}, {"compare", &cmd_compare}};
  std::size_t files = 0;
  for (const auto& [name, cmd] : commands) {
    const Manifest first = cmd(cfg, root / "a");
    const Manifest second = cmd(cfg, root / "b");
    const bool equal = first.files == second.files && first.config_hash == second.config_hash;
    files += first.files.size();
    same = same && equal;
    detail << name << (equal ? " ok" : " DIFFERS") << "; ";
  }
  fs::remove_all(root);
  return {same, fmt("%zu artifacts compared by manifest hash: ", files) + detail.str()};
}

// Supplementary checks from module contracts; printed, not counted.
void info(const std::string& name, bool met, const std::string& detail) {
  std::printf("[INFO] %s (%s): %s\n", name.c_str(), met ? "met" : "not met", detail.c_str());
  std::fflush(stdout);
}

void tail_share(const std::vector<SeedComparison>& runs, const ExperimentConfig& cfg) {
  bool met = true;
  std::ostringstream detail;
  for (const SeedComparison& run : runs) {
    ExperimentConfig c = cfg;
    c.reseed(run.seed);
    const GroupSplit g = split_groups(longtail_counts(c.dataset.params.classes,
                                                      c.dataset.params.n_max,
                                                      c.dataset.params.ratio));
    auto share = [&](const std::vector<int>& group) {
      Index n = 0;
      for (int k : group) n += run.dbg.accepted_per_class[k];
      return run.dbg.accepted ? static_cast<double>(n) / static_cast<double>(run.dbg.accepted) : 0.0;
    };
    met = met && share(g.tail) >= share(g.head);
    detail << fmt("seed %llu tail %.3f head %.3f; ", static_cast<unsigned long long>(run.seed),
                  share(g.tail), share(g.head));
  }
  info("DBG accepted set: tail-target share >= head-target share", met, detail.str());
}

void balanced_sanity(const ExperimentConfig& base) {
  bool met = true;
  std::ostringstream detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    ExperimentConfig cfg = base;
    cfg.dataset.params.ratio = 1.0;
    cfg.reseed(seed);
    const SeedComparison run = compare_seed(cfg);
    const double a = run.arm("A").overall;
    double spread = 0.0;
    for (const char* arm : {"B", "C"}) spread = std::max(spread, std::abs(run.arm(arm).overall - a));
    met = met && spread < 0.01;
    detail << fmt("seed %llu max |arm - A| = %.2f points; ", static_cast<unsigned long long>(seed),
                  100.0 * spread);
  }
  info("ratio = 1: arms within 1 accuracy point", met, detail.str());
}

}  // namespace

int main() {
  const ExperimentConfig cfg = benchmark_config();
  std::printf("benchmark: C=%d d=%d n_max=%d ratio=%g, seeds", cfg.dataset.params.classes,
              cfg.dataset.params.dim, cfg.dataset.params.n_max, cfg.dataset.params.ratio);
  for (auto s : cfg.compare.seeds) std::printf(" %llu", static_cast<unsigned long long>(s));
  std::printf(", %u worker(s)\n", worker_count());
  std::fflush(stdout);

  // The arm comparison feeds criteria 4, 7, 8 and 9.
  std::vector<SeedComparison> runs;
  const auto t0 = std::chrono::steady_clock::now();
  std::string compare_error;
  try {
    for (std::uint64_t seed : cfg.compare.seeds) {
      ExperimentConfig c = cfg;
      c.reseed(seed);
      runs.push_back(compare_seed(c));
    }
  } catch (const std::exception& e) {
    compare_error = e.what();
  }
  const double compare_secs = seconds_since(t0);
  auto with_runs = [&](auto&& f) {
    return guarded([&] {
      if (!compare_error.empty()) return Outcome{false, "compare failed: " + compare_error};
      return f();
    });
  };

  report(1, "vMF recovery", guarded(vmf_recovery));
  report(2, "overlap identity and symmetry", guarded([&] { return overlap_identity(cfg); }));
  report(3, "overlap oracle (d=3)", guarded(overlap_oracle));
  report(4, "outlier-rate calibration", with_runs([&] { return outlier_calibration(runs); }));
  report(5, "diffusion exactness", guarded(diffusion_exactness));
  report(6, "generation confidence direction", guarded([&] { return fig3_direction(cfg); }));
  report(7, "overlap and outlier direction", with_runs([&] { return fig2_direction(runs); }));
  report(8, "DBG end-to-end", with_runs([&] { return dbg_end_to_end(runs, compare_secs); }));
  report(9, "filter-rule soundness", with_runs([&] { return filter_soundness(runs); }));
  report(10, "determinism", guarded(determinism));

  if (compare_error.empty()) {
    try {
      tail_share(runs, cfg);
      balanced_sanity(cfg);
    } catch (const std::exception& e) {
      info("supplementary checks", false, e.what());
    }
  }

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
