#include "advlab/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <boost/math/special_functions/erf.hpp>

namespace advlab::numerics {
namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

using Block = std::array<std::uint32_t, 4>;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

Block philox4x32_10(Block ctr, std::uint32_t k0, std::uint32_t k1) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  return ctr;
}

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void require_positive_dims(Eigen::Index rows, Eigen::Index cols) {
  if (rows <= 0 || cols <= 0) {
    throw std::invalid_argument("matrix dimensions must be positive");
  }
}

double inverse_normal_cdf(double u) {
  u = std::clamp(u, 1e-16, 1.0 - 1e-16);
  return std::numbers::sqrt2 * boost::math::erf_inv(2.0 * u - 1.0);
}

}  // namespace

RngStream RngStream::fork(std::uint64_t child) const {
  return RngStream(seed_, splitmix64(stream_id_ ^ splitmix64(child + 0x632BE59BD9B4E019ull)));
}

std::uint64_t RngStream::next_u64() {
  if (has_buffered_) {
    has_buffered_ = false;
    return buffered_;
  }
  const Block ctr = {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                     static_cast<std::uint32_t>(stream_id_), static_cast<std::uint32_t>(stream_id_ >> 32)};
  ++counter_;
  const Block out = philox4x32_10(ctr, static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32));
  buffered_ = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
  has_buffered_ = true;
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

int RngStream::sign() { return (next_u64() >> 63) ? 1 : -1; }

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("below(0)");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

Mat gaussian_mat(RngStream& rng, Eigen::Index rows, Eigen::Index cols, double variance) {
  require_positive_dims(rows, cols);
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw std::invalid_argument("gaussian_mat: variance must be positive and finite");
  }
  const double sd = std::sqrt(variance);
  Mat m(rows, cols);
  // Fill in row-major order so the draw order matches the serialized layout.
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
  }
  return m;
}

Vec gaussian_vec(RngStream& rng, Eigen::Index n, double variance) {
  require_positive_dims(n, 1);
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw std::invalid_argument("gaussian_vec: variance must be positive and finite");
  }
  const double sd = std::sqrt(variance);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = sd * rng.normal();
  return v;
}

Vec sample_sphere(RngStream& rng, Eigen::Index d) {
  if (d <= 0) throw std::invalid_argument("sample_sphere: dimension must be >= 1");
  for (;;) {
    Vec v(d);
    for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
    const double n = v.norm();
    if (n > 1e-300) return v / n;
  }
}

Vec sample_sphere_radius(RngStream& rng, Eigen::Index d, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw std::invalid_argument("sample_sphere_radius: radius must be positive");
  }
  return radius * sample_sphere(rng, d);
}

double fro_norm(const Mat& m) { return m.norm(); }

Vec row_dots(const Mat& w, const Vec& x) {
  if (w.cols() != x.size()) throw std::invalid_argument("row_dots: dimension mismatch");
  Vec out(w.rows());
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(r, j) * x(j);
    out(r) = s;
  }
  return out;
}

double spectral_norm_est(const Mat& m, int iters) {
  if (iters < 1) throw std::invalid_argument("spectral_norm_est: iters must be >= 1");
  if (m.size() == 0) return 0.0;
  RngStream start(0x5eed5eedull, 0);
  Vec v = sample_sphere(start, m.cols());
  double sigma = 0.0;
  for (int k = 0; k < iters; ++k) {
    const Vec u = m * v;
    const double un = u.norm();
    if (un == 0.0) return 0.0;
    Vec w = m.transpose() * (u / un);
    const double wn = w.norm();
    sigma = wn;
    if (wn == 0.0) return 0.0;
    v = w / wn;
  }
  return sigma;
}

bool all_finite(const Mat& m) { return m.allFinite(); }
bool all_finite(const Vec& v) { return v.allFinite(); }

Vec r_sequence(std::uint64_t index, Eigen::Index dim) {
  if (dim <= 0) throw std::invalid_argument("r_sequence: dim must be positive");
  // phi_d is the unique positive root of x^(d+1) = x + 1.
  double phi = 2.0;
  for (int k = 0; k < 64; ++k) phi = std::pow(1.0 + phi, 1.0 / static_cast<double>(dim + 1));
  Vec out(dim);
  const double n = static_cast<double>(index + 1);
  double inv = 1.0;
  for (Eigen::Index j = 0; j < dim; ++j) {
    inv /= phi;
    const double x = 0.5 + n * inv;
    out(j) = x - std::floor(x);
  }
  return out;
}

Vec quasi_gaussian(std::uint64_t index, Eigen::Index dim) {
  Vec u = r_sequence(index, dim);
  for (Eigen::Index j = 0; j < dim; ++j) u(j) = inverse_normal_cdf(u(j));
  return u;
}

Vec quasi_sphere(std::uint64_t index, Eigen::Index d) {
  Vec g = quasi_gaussian(index, d);
  const double n = g.norm();
  if (n < 1e-300) {
    Vec e = Vec::Zero(d);
    e(0) = 1.0;
    return e;
  }
  return g / n;
}

Vec quasi_ball(std::uint64_t index, const Vec& center, double radius) {
  const Eigen::Index d = center.size();
  const Vec u = r_sequence(index, d + 1);
  Vec g(d);
  for (Eigen::Index j = 0; j < d; ++j) g(j) = inverse_normal_cdf(u(j));
  const double n = g.norm();
  if (n < 1e-300) return center;
  const double r = radius * std::pow(u(d), 1.0 / static_cast<double>(d));
  return center + (r / n) * g;
}

double angle_between(const Vec& x, const Vec& y) {
  const double c = x.dot(y) / (x.norm() * y.norm());
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace advlab::numerics
