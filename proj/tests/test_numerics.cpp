#include <cmath>
#include <set>

#include "advlab/numerics.hpp"
#include "advlab/parallel.hpp"
#include "doctest.h"

using namespace advlab::numerics;

TEST_CASE("philox stream matches the published zero-key vector") {
  // Random123 known answer: counter 0, key 0 -> 6627e8d5 e169c58d bc57ac4c 9b00dbd8.
  RngStream rng(0, 0);
  CHECK(rng.next_u64() == 0xe169c58d6627e8d5ull);
  CHECK(rng.next_u64() == 0x9b00dbd8bc57ac4cull);
}

TEST_CASE("streams are reproducible and forks differ") {
  RngStream a(42, 3), b(42, 3);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream p(42);
  std::set<std::uint64_t> firsts;
  for (std::uint64_t c = 0; c < 64; ++c) firsts.insert(p.fork(c).next_u64());
  CHECK(firsts.size() == 64);
  // fork depends only on identity, not on position
  RngStream q(42);
  q.next_u64();
  CHECK(q.fork(5).next_u64() == p.fork(5).next_u64());
}

TEST_CASE("uniform and normal moments") {
  RngStream rng(7);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
  }
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("below is in range and rejects zero") {
  RngStream rng(1);
  for (int i = 0; i < 1000; ++i) CHECK(rng.below(7) < 7);
  CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
}

TEST_CASE("gaussian matrices validate their arguments") {
  RngStream rng(1);
  CHECK_THROWS(gaussian_mat(rng, 0, 3, 1.0));
  CHECK_THROWS(gaussian_mat(rng, 3, 3, -1.0));
  CHECK_THROWS(gaussian_vec(rng, 3, std::nan("")));
  const Mat m = gaussian_mat(rng, 400, 400, 2.0 / 400);
  // Frobenius norm^2 ~ 2 * 400
  CHECK(m.squaredNorm() / 800.0 == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("sphere samples are unit norm") {
  RngStream rng(3);
  for (int d : {1, 2, 10, 100}) {
    CHECK(sample_sphere(rng, d).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sample_sphere_radius(rng, d, 3.0).norm() == doctest::Approx(3.0).epsilon(1e-12));
  }
  CHECK_THROWS(sample_sphere(rng, 0));
}

TEST_CASE("spectral norm agrees with the SVD") {
  RngStream rng(11);
  const Mat m = gaussian_mat(rng, 30, 20, 1.0);
  Eigen::JacobiSVD<Mat> svd(m);
  CHECK(spectral_norm_est(m, 500) == doctest::Approx(svd.singularValues()(0)).epsilon(1e-8));
  CHECK(spectral_norm_est(m) == spectral_norm_est(m));
  CHECK(spectral_norm_est(Mat::Zero(3, 3)) == 0.0);
}

TEST_CASE("quasi-random sequences") {
  SUBCASE("r-sequence lies in the open unit cube and is deterministic") {
    for (std::uint64_t i = 0; i < 500; ++i) {
      const Vec u = r_sequence(i, 4);
      CHECK(u.minCoeff() > 0.0);
      CHECK(u.maxCoeff() < 1.0);
      CHECK(u == r_sequence(i, 4));
    }
  }
  SUBCASE("one-dimensional sequence is equidistributed") {
    int hist[10] = {};
    for (std::uint64_t i = 0; i < 10000; ++i) ++hist[static_cast<int>(r_sequence(i, 1)(0) * 10)];
    for (int b : hist) CHECK(std::abs(b - 1000) < 20);
  }
  SUBCASE("quasi sphere and ball membership") {
    Vec c(3);
    c << 1.0, -2.0, 0.5;
    for (std::uint64_t i = 0; i < 500; ++i) {
      CHECK(quasi_sphere(i, 5).norm() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK((quasi_ball(i, c, 0.3) - c).norm() <= 0.3 + 1e-12);
    }
  }
  SUBCASE("quasi gaussian has unit variance") {
    double s2 = 0;
    for (std::uint64_t i = 0; i < 20000; ++i) s2 += quasi_gaussian(i, 2).squaredNorm();
    CHECK(s2 / 40000 == doctest::Approx(1.0).epsilon(0.02));
  }
}

TEST_CASE("row dots ignore storage alignment") {
  RngStream rng(2);
  const Mat w = gaussian_mat(rng, 33, 7, 1.0);
  Mat shifted(34, 7);
  shifted.bottomRows(33) = w;
  const Mat copy = shifted.bottomRows(33);
  const Vec x = sample_sphere(rng, 7);
  CHECK(row_dots(w, x) == row_dots(copy, x));
  CHECK((row_dots(w, x) - w * x).norm() < 1e-12);
  CHECK_THROWS(row_dots(w, Vec::Ones(3)));
}

TEST_CASE("angle between clamps rounding") {
  Vec x(2), y(2);
  x << 1.0, 0.0;
  y << 0.0, 2.0;
  CHECK(angle_between(x, y) == doctest::Approx(M_PI / 2));
  CHECK(angle_between(x, x) == 0.0);
  CHECK(angle_between(x, -x) == doctest::Approx(M_PI));
}

TEST_CASE("parallel_for visits every index and rethrows") {
  std::vector<int> hits(1000, 0);
  advlab::parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(advlab::parallel_for(10, 3,
                                       [](std::size_t i) {
                                         if (i == 7) throw std::runtime_error("boom");
                                       }),
                  std::runtime_error);
}
