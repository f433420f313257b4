#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include <Eigen/Dense>

namespace advlab::numerics {

// Dense storage for every weight matrix and feature vector in the library.
// Serialization always writes row-major regardless of Eigen's internal layout.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Counter-based random stream (Philox4x32-10 keyed by the seed).
///
/// A stream is identified by (seed, stream_id); the sample sequence depends
/// only on that pair and on how many draws were taken, never on thread
/// scheduling. `fork(i)` derives an independent child stream, which is how
/// per-example and per-layer randomness is assigned.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t position() const { return counter_; }

  RngStream fork(std::uint64_t child) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller; both variates of a pair are used.
  double normal();
  /// +1 or -1 with equal probability.
  int sign();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
  std::uint64_t buffered_ = 0;
  bool has_buffered_ = false;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

Mat gaussian_mat(RngStream& rng, Eigen::Index rows, Eigen::Index cols, double variance);
Vec gaussian_vec(RngStream& rng, Eigen::Index n, double variance);

/// Uniform point on the unit sphere in R^d.
Vec sample_sphere(RngStream& rng, Eigen::Index d);
/// Uniform point on the sphere of the given radius in R^d.
Vec sample_sphere_radius(RngStream& rng, Eigen::Index d, double radius);

double fro_norm(const Mat& m);

/// W x summed row by row in a fixed order. Unlike Eigen's GEMV the result
/// does not depend on how W happens to be aligned in memory, so equal rows
/// give bit-equal entries.
Vec row_dots(const Mat& w, const Vec& x);

/// Largest singular value by power iteration on M^T M. The start vector is a
/// fixed pseudo-random draw, so repeated calls agree bit for bit.
double spectral_norm_est(const Mat& m, int iters = 200);

bool all_finite(const Mat& m);
bool all_finite(const Vec& v);

// Low-discrepancy helpers. Prefixes of these sequences are nested: the first
// N points of a longer request are exactly the points of a shorter one.

/// Point `index` of the additive recurrence x_n = frac(1/2 + n * alpha)
/// with alpha built from the generalized golden ratio for `dim`; entries lie
/// in (0, 1).
Vec r_sequence(std::uint64_t index, Eigen::Index dim);
/// r_sequence point mapped through the inverse normal CDF; components are
/// approximately i.i.d. N(0, 1).
Vec quasi_gaussian(std::uint64_t index, Eigen::Index dim);
/// Quasi-random point on the unit sphere in R^d.
Vec quasi_sphere(std::uint64_t index, Eigen::Index d);
/// Quasi-random point in the closed ball of radius `radius` around `center`.
Vec quasi_ball(std::uint64_t index, const Vec& center, double radius);

/// Angle between two vectors in [0, pi], clamped against rounding.
double angle_between(const Vec& x, const Vec& y);

}  // namespace advlab::numerics
