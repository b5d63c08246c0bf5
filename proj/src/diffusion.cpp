#include "blab/diffusion.hpp"

#include <numbers>

namespace blab {

NoiseSchedule default_schedule(int T) {
  const double scale = 1000.0 / T;
  return linear_schedule(T, 1e-4 * scale, 0.02 * scale);
}

GmmScoreModel::GmmScoreModel(MixtureSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Vector GmmScoreModel::predict_noise(const Eigen::Ref<const Vector>& x_t, std::optional<int> cond,
                                    int t, const NoiseSchedule& schedule) const {
  require(x_t.size() == dim(), ErrorKind::DimensionMismatch,
          "predict_noise: x_t has dimension " + std::to_string(x_t.size()));
  const double ab = schedule.alpha_bar(t);
  const double sab = std::sqrt(ab);
  const double var = ab * spec_.component_scale * spec_.component_scale + (1.0 - ab);
  const double gain = std::sqrt(1.0 - ab) / var;
  const auto& means = spec_.component_means;

  if (cond) {
    require(*cond >= 0 && *cond < num_classes(), ErrorKind::IndexOutOfRange,
            "condition " + std::to_string(*cond) + " out of range");
    return gain * (x_t - sab * means.row(*cond).transpose());
  }

  // Posterior responsibilities over components; shared variance, so only the
  // squared distances and priors matter.
  const int C = num_classes();
  Vector logw(C);
  for (int c = 0; c < C; ++c) {
    const double d2 = (x_t - sab * means.row(c).transpose()).squaredNorm();
    logw(c) = (spec_.priors(c) > 0.0 ? std::log(spec_.priors(c))
                                     : -std::numeric_limits<double>::infinity()) -
              0.5 * d2 / var;
  }
  const double mx = logw.maxCoeff();
  Vector w = (logw.array() - mx).exp();
  w /= w.sum();
  const Vector mean_mix = means.transpose() * w;
  return gain * (x_t - sab * mean_mix);
}

double GmmScoreModel::log_density(const Eigen::Ref<const Vector>& x_t, std::optional<int> cond,
                                  int t, const NoiseSchedule& schedule) const {
  require(x_t.size() == dim(), ErrorKind::DimensionMismatch, "log_density: dimension");
  const double ab = schedule.alpha_bar(t);
  const double sab = std::sqrt(ab);
  const double var = ab * spec_.component_scale * spec_.component_scale + (1.0 - ab);
  const double norm = -0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi * var);
  auto comp = [&](int c) {
    return norm - 0.5 * (x_t - sab * spec_.component_means.row(c).transpose()).squaredNorm() / var;
  };
  if (cond) {
    require(*cond >= 0 && *cond < num_classes(), ErrorKind::IndexOutOfRange, "condition");
    return comp(*cond);
  }
  Vector terms(num_classes());
  for (int c = 0; c < num_classes(); ++c) terms(c) = std::log(spec_.priors(c)) + comp(c);
  const double mx = terms.maxCoeff();
  return mx + std::log((terms.array() - mx).exp().sum());
}

void GuidanceConfig::validate(int num_classes) const {
  require(std::isfinite(s), ErrorKind::InvalidArgument, "guidance scale must be finite");
  require(y_target >= 0 && y_target < num_classes, ErrorKind::IndexOutOfRange, "y_t out of range");
  if (mode == GuidanceMode::Modified) {
    require(y_disturb.has_value(), ErrorKind::InvalidArgument, "modified guidance needs y_d");
    require(*y_disturb >= 0 && *y_disturb < num_classes, ErrorKind::IndexOutOfRange,
            "y_d out of range");
    require(*y_disturb != y_target, ErrorKind::InvalidArgument, "modified guidance needs y_d != y_t");
  }
}

Vector guided_noise(const GmmScoreModel& model, const Eigen::Ref<const Vector>& x_t, int t,
                    const NoiseSchedule& schedule, const GuidanceConfig& guidance) {
  if (guidance.mode == GuidanceMode::Modified) {
    return modified_cfg(model.predict_noise(x_t, guidance.y_target, t, schedule),
                        model.predict_noise(x_t, *guidance.y_disturb, t, schedule), guidance.s);
  }
  return cfg_combine(model.predict_noise(x_t, std::nullopt, t, schedule),
                     model.predict_noise(x_t, guidance.y_target, t, schedule), guidance.s);
}

Vector sample(const GmmScoreModel& model, const NoiseSchedule& schedule,
              const GuidanceConfig& guidance, std::uint64_t seed) {
  guidance.validate(model.num_classes());
  Rng rng(seed);
  Vector x = standard_normal(rng, model.dim());
  for (int t = schedule.horizon(); t >= 1; --t) {
    const Vector eps = guided_noise(model, x, t, schedule, guidance);
    x = denoise_step(x, t, eps, schedule).second;
  }
  return x;
}

Matrix sample_batch(const GmmScoreModel& model, const NoiseSchedule& schedule,
                    const GuidanceConfig& guidance, std::uint64_t seed, int count) {
  require(count >= 0, ErrorKind::InvalidArgument, "count >= 0");
  Matrix out(count, model.dim());
  parallel_for(static_cast<std::size_t>(count), [&](std::size_t i) {
    out.row(static_cast<Index>(i)) =
        sample(model, schedule, guidance, derive_seed(seed, {i})).transpose();
  });
  return out;
}

}  // namespace blab
