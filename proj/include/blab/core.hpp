#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace blab {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;
using Index = Eigen::Index;

enum class ErrorKind {
  InvalidArgument,
  PlacementFailure,
  Io,
  Parse,
  InvariantViolation,
  NumericDivergence,
  DimensionMismatch,
  ZeroFeatureVector,
  IndexOutOfRange,
  InsufficientSamples,
  DegenerateResultant,
  NonUnitInput,
  TimestepOutOfRange,
  ZeroResultant,
  EmptyGroup,
  InsufficientClassSamples,
  Config,
  MissingDependency,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

template <typename A, typename B>
void require_same_size(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                       const char* context) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorKind::DimensionMismatch,
                std::string(context) + ": " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
}

/// splitmix64 finalizer; the building block for every derived RNG stream.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent sub-seed from a base seed and a path of indices,
/// e.g. derive_seed(seed, {sample, candidate}).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

using Rng = std::mt19937_64;

/// Standard normal vector of length n drawn from rng.
Vector standard_normal(Rng& rng, Index n);

/// Worker count: BLAB_THREADS if set and positive, else hardware concurrency.
unsigned worker_count();

/// Runs body(i) for i in [0, n) over up to worker_count() threads. Callers
/// write results into slot i so output order never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace blab
