#include "blab/vmf.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace blab {

namespace {

constexpr double kSeriesLimit = 50.0;

double log_bessel_series(double nu, double x) {
  const double log_half = std::log(0.5 * x);
  double max_term = -std::numeric_limits<double>::infinity();
  double sum = 0.0;  // scaled by exp(max_term)
  for (int k = 0; k < 2000; ++k) {
    const double term = (2.0 * k + nu) * log_half - std::lgamma(k + 1.0) - std::lgamma(k + nu + 1.0);
    if (term > max_term) {
      sum = sum * std::exp(max_term - term) + 1.0;
      max_term = term;
    } else {
      sum += std::exp(term - max_term);
      if (k > x && term - max_term < -40.0) break;
    }
  }
  return max_term + std::log(sum);
}

// I_nu(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(nu) / x^k
double log_bessel_hankel(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  double prev = 1.0;
  for (int k = 1; k < 60; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (k * 8.0 * x);
    if (std::abs(term) > std::abs(prev)) break;  // asymptotic series started diverging
    sum += term;
    prev = term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

// Debye expansion: I_nu(nu z) ~ e^{nu eta} / (sqrt(2 pi nu) (1+z^2)^{1/4}) sum u_k(t) / nu^k
double log_bessel_debye(double nu, double x) {
  const double z = x / nu;
  const double root = std::sqrt(1.0 + z * z);
  const double t = 1.0 / root;
  const double eta = root + std::log(z / (1.0 + root));
  const double t2 = t * t;
  const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
  const double u2 = t2 * (81.0 + t2 * (-462.0 + t2 * 385.0)) / 1152.0;
  const double u3 =
      t * t2 * (30375.0 + t2 * (-369603.0 + t2 * (765765.0 - t2 * 425425.0))) / 414720.0;
  const double u4 =
      t2 * t2 *
      (4465125.0 +
       t2 * (-94121676.0 + t2 * (349922430.0 + t2 * (-446185740.0 + t2 * 185910725.0)))) /
      39813120.0;
  const double inv = 1.0 / nu;
  const double series = 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * u4)));
  return nu * eta - 0.5 * std::log(2.0 * std::numbers::pi * nu) - 0.5 * std::log(root) +
         std::log(series);
}

}  // namespace

double log_bessel_i(double nu, double x) {
  require(nu >= 0.0 && x > 0.0, ErrorKind::InvalidArgument, "log_bessel_i needs nu >= 0, x > 0");
  if (x < kSeriesLimit) return log_bessel_series(nu, x);
  if (nu * nu < 0.5 * x) return log_bessel_hankel(nu, x);
  return log_bessel_debye(nu, x);
}

double vmf_log_normalizer(Index d, double kappa) {
  require(d >= 2, ErrorKind::InvalidArgument, "vMF needs d >= 2");
  require(kappa >= 0.0 && std::isfinite(kappa), ErrorKind::InvalidArgument, "kappa >= 0");
  const double half = 0.5 * static_cast<double>(d);
  if (kappa == 0.0)
    return std::lgamma(half) - std::log(2.0) - half * std::log(std::numbers::pi);
  const double nu = half - 1.0;
  return nu * std::log(kappa) - half * std::log(2.0 * std::numbers::pi) - log_bessel_i(nu, kappa);
}

VmfModel fit_vmf(const Eigen::Ref<const Matrix>& unit_samples) {
  const Index n = unit_samples.rows();
  const Index d = unit_samples.cols();
  require(n >= 2, ErrorKind::InsufficientSamples, "fit_vmf needs at least 2 samples");
  require(d >= 2, ErrorKind::InvalidArgument, "fit_vmf needs d >= 2");
  for (Index i = 0; i < n; ++i)
    require(std::abs(unit_samples.row(i).norm() - 1.0) <= 1e-6, ErrorKind::NonUnitInput,
            "sample " + std::to_string(i) + " is not unit length");

  const Vector resultant = unit_samples.colwise().sum().transpose();
  const double rnorm = resultant.norm();
  VmfModel model;
  if (rnorm < 1e-12) {
    model.mu = unit_samples.row(0).transpose();
    model.kappa = 0.0;
    model.degenerate = true;
    return model;
  }
  model.mu = resultant / rnorm;
  const double rbar = std::min(1.0, rnorm / static_cast<double>(n));
  const double denom = 1.0 - rbar * rbar;
  const double dd = static_cast<double>(d);
  if (denom <= 0.0) {
    model.kappa = kKappaMax;
  } else {
    model.kappa = std::min(kKappaMax, rbar * (dd - rbar * rbar) / denom);
  }
  return model;
}

double vmf_log_density(const VmfModel& model, const Eigen::Ref<const Vector>& y) {
  require(y.size() == model.dim(), ErrorKind::DimensionMismatch, "vmf_log_density: dimension");
  require(std::abs(y.norm() - 1.0) <= 1e-6, ErrorKind::NonUnitInput, "y must be unit length");
  return vmf_log_normalizer(model.dim(), model.kappa) + model.kappa * model.mu.dot(y);
}

Vector sample_vmf(const VmfModel& model, Rng& rng) {
  const Index d = model.dim();
  Vector g = standard_normal(rng, d);
  if (model.kappa == 0.0) return g / g.norm();

  const double kappa = model.kappa;
  const double dm1 = static_cast<double>(d - 1);
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);
  std::gamma_distribution<double> gamma(0.5 * dm1, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double w = 1.0;
  for (;;) {
    const double ga = gamma(rng);
    const double gb = gamma(rng);
    const double z = ga / (ga + gb);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = unif(rng);
    if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
  }
  // Uniform direction orthogonal to mu.
  Vector v = g - model.mu.dot(g) * model.mu;
  const double vn = v.norm();
  if (vn < 1e-300) return model.mu;
  v /= vn;
  Vector y = w * model.mu + std::sqrt(std::max(0.0, 1.0 - w * w)) * v;
  return y / y.norm();
}

Matrix sample_vmf(const VmfModel& model, Index n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix out(n, model.dim());
  for (Index i = 0; i < n; ++i) out.row(i) = sample_vmf(model, rng).transpose();
  return out;
}

}  // namespace blab
