#pragma once

#include "blab/core.hpp"

namespace blab {

inline constexpr double kKappaMax = 1e6;

/// von Mises-Fisher density C_d(kappa) exp(kappa mu^T y) on S^{d-1}.
struct VmfModel {
  Vector mu;
  double kappa = 0.0;
  /// Set when the sample resultant vanished and mu fell back to the first sample.
  bool degenerate = false;

  Index dim() const { return mu.size(); }
};

/// log I_nu(x) for nu >= 0, x > 0. Power series below x = 50, large-argument
/// asymptotics above (Hankel for small orders, Debye uniform expansion otherwise).
double log_bessel_i(double nu, double x);

/// log C_d(kappa); kappa = 0 gives -log |S^{d-1}|.
double vmf_log_normalizer(Index d, double kappa);

/// Row-wise L2 normalization; throws on a zero row.
template <typename Derived>
typename Derived::PlainObject l2_normalize_rows(const Eigen::MatrixBase<Derived>& features) {
  typename Derived::PlainObject out = features;
  for (Index i = 0; i < out.rows(); ++i) {
    const auto norm = out.row(i).norm();
    require(norm > 0, ErrorKind::ZeroFeatureVector, "row " + std::to_string(i) + " is zero");
    out.row(i) /= norm;
  }
  return out;
}

/// Mean direction from the resultant; kappa from r(d - r^2)/(1 - r^2), capped
/// at kKappaMax.
VmfModel fit_vmf(const Eigen::Ref<const Matrix>& unit_samples);

double vmf_log_density(const VmfModel& model, const Eigen::Ref<const Vector>& y);

/// Wood's rejection sampler.
Vector sample_vmf(const VmfModel& model, Rng& rng);
Matrix sample_vmf(const VmfModel& model, Index n, std::uint64_t seed);

}  // namespace blab
