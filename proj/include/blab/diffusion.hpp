#pragma once

#include "blab/core.hpp"
#include "blab/synth_data.hpp"

#include <cmath>
#include <optional>
#include <utility>

namespace blab {

/// beta_t for t = 1..T; alpha_bar(0) is defined as 1.
template <typename Scalar>
class BasicNoiseSchedule {
 public:
  BasicNoiseSchedule() = default;

  explicit BasicNoiseSchedule(VectorX<Scalar> betas) : beta_(std::move(betas)) {
    require(beta_.size() >= 2, ErrorKind::InvalidArgument, "schedule needs T >= 2");
    require(((beta_.array() > Scalar(0)) && (beta_.array() < Scalar(1))).all(),
            ErrorKind::InvalidArgument, "every beta_t must lie in (0, 1)");
    alpha_bar_.resize(beta_.size() + 1);
    alpha_bar_(0) = Scalar(1);
    for (Index t = 1; t <= beta_.size(); ++t) alpha_bar_(t) = alpha_bar_(t - 1) * (Scalar(1) - beta_(t - 1));
  }

  int horizon() const { return static_cast<int>(beta_.size()); }
  Scalar beta(int t) const { return beta_(check(t, 1) - 1); }
  Scalar alpha(int t) const { return Scalar(1) - beta(t); }
  Scalar alpha_bar(int t) const { return alpha_bar_(check(t, 0)); }
  const VectorX<Scalar>& betas() const { return beta_; }

 private:
  int check(int t, int lo) const {
    if (t < lo || t > horizon())
      throw Error(ErrorKind::TimestepOutOfRange,
                  "t = " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                      std::to_string(horizon()) + "]");
    return t;
  }

  VectorX<Scalar> beta_;
  VectorX<Scalar> alpha_bar_;
};

using NoiseSchedule = BasicNoiseSchedule<double>;

/// beta linearly spaced over [beta_start, beta_end], endpoints inclusive.
template <typename Scalar = double>
BasicNoiseSchedule<Scalar> linear_schedule(int T, Scalar beta_start, Scalar beta_end) {
  require(T >= 2, ErrorKind::InvalidArgument, "T >= 2");
  require(beta_start > Scalar(0) && beta_start <= beta_end && beta_end < Scalar(1),
          ErrorKind::InvalidArgument, "need 0 < beta_start <= beta_end < 1");
  return BasicNoiseSchedule<Scalar>(VectorX<Scalar>::LinSpaced(T, beta_start, beta_end));
}

/// DDPM defaults (1e-4, 0.02) rescaled by 1000 / T.
NoiseSchedule default_schedule(int T = 100);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <typename A, typename B, typename Scalar>
auto forward_noise(const Eigen::MatrixBase<A>& x0, int t, const Eigen::MatrixBase<B>& eps,
                   const BasicNoiseSchedule<Scalar>& schedule) {
  require_same_size(x0, eps, "forward_noise");
  require(t >= 1 && t <= schedule.horizon(), ErrorKind::TimestepOutOfRange,
          "forward_noise: t = " + std::to_string(t));
  const Scalar ab = schedule.alpha_bar(t);
  using Plain = typename A::PlainObject;
  return Plain(std::sqrt(ab) * x0 + std::sqrt(Scalar(1) - ab) * eps);
}

/// (1 - s) eps_uncond + s eps_cond.
template <typename A, typename B, typename Scalar>
auto cfg_combine(const Eigen::MatrixBase<A>& eps_uncond, const Eigen::MatrixBase<B>& eps_cond,
                 Scalar s) {
  require_same_size(eps_uncond, eps_cond, "cfg_combine");
  using Plain = typename A::PlainObject;
  return Plain((Scalar(1) - s) * eps_uncond + s * eps_cond);
}

/// (1 - s) eps(y_t) + s eps(y_d): the target/disturbing mixture.
template <typename A, typename B, typename Scalar>
auto modified_cfg(const Eigen::MatrixBase<A>& eps_target, const Eigen::MatrixBase<B>& eps_disturb,
                  Scalar s) {
  require_same_size(eps_target, eps_disturb, "modified_cfg");
  using Plain = typename A::PlainObject;
  return Plain((Scalar(1) - s) * eps_target + s * eps_disturb);
}

/// Deterministic reverse update. Returns (x0_hat, x_{t-1}); at t = 1 the
/// second element equals x0_hat since abar_0 = 1.
template <typename A, typename B, typename Scalar>
auto denoise_step(const Eigen::MatrixBase<A>& x_t, int t, const Eigen::MatrixBase<B>& eps_hat,
                  const BasicNoiseSchedule<Scalar>& schedule) {
  require_same_size(x_t, eps_hat, "denoise_step");
  require(t >= 1 && t <= schedule.horizon(), ErrorKind::TimestepOutOfRange,
          "denoise_step: t = " + std::to_string(t));
  using Plain = typename A::PlainObject;
  const Scalar ab = schedule.alpha_bar(t);
  const Scalar ab_prev = schedule.alpha_bar(t - 1);
  Plain x0_hat = (x_t - std::sqrt(Scalar(1) - ab) * eps_hat) / std::sqrt(ab);
  Plain x_prev = std::sqrt(ab_prev) * x0_hat + std::sqrt(Scalar(1) - ab_prev) * eps_hat;
  return std::pair<Plain, Plain>(std::move(x0_hat), std::move(x_prev));
}

/// Exact noise predictor for an isotropic Gaussian mixture. Under condition c
/// the noised density is N(sqrt(abar) m_c, (abar sigma^2 + 1 - abar) I).
class GmmScoreModel {
 public:
  explicit GmmScoreModel(MixtureSpec spec);

  const MixtureSpec& spec() const { return spec_; }
  int num_classes() const { return spec_.num_classes(); }
  Index dim() const { return spec_.dim(); }

  /// eps_hat = -sqrt(1 - abar_t) grad log p_t(x_t | cond). With no condition
  /// the prior-weighted mixture is used.
  Vector predict_noise(const Eigen::Ref<const Vector>& x_t, std::optional<int> cond, int t,
                       const NoiseSchedule& schedule) const;

  /// log p_t(x_t | cond) including normalization.
  double log_density(const Eigen::Ref<const Vector>& x_t, std::optional<int> cond, int t,
                     const NoiseSchedule& schedule) const;

 private:
  MixtureSpec spec_;
};

enum class GuidanceMode { Standard, Modified };

struct GuidanceConfig {
  double s = 1.0;
  GuidanceMode mode = GuidanceMode::Standard;
  int y_target = 0;
  std::optional<int> y_disturb;

  void validate(int num_classes) const;
};

/// Guided noise estimate at (x_t, t) for the configured mode.
Vector guided_noise(const GmmScoreModel& model, const Eigen::Ref<const Vector>& x_t, int t,
                    const NoiseSchedule& schedule, const GuidanceConfig& guidance);

/// Full deterministic reverse pass T -> 1 from a seeded standard normal draw.
Vector sample(const GmmScoreModel& model, const NoiseSchedule& schedule,
              const GuidanceConfig& guidance, std::uint64_t seed);

/// `count` samples; sample i uses derive_seed(seed, {i}).
Matrix sample_batch(const GmmScoreModel& model, const NoiseSchedule& schedule,
                    const GuidanceConfig& guidance, std::uint64_t seed, int count);

}  // namespace blab
