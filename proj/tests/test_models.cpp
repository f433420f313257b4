#include <cmath>
#include <functional>

#include "advlab/models.hpp"
#include "doctest.h"

using namespace advlab;
using namespace advlab::models;
using numerics::RngStream;
using numerics::Vec;

namespace {

double central(const std::function<double(double)>& f, double z, double h = 1e-6) {
  return (f(z + h) - f(z - h)) / (2 * h);
}

}  // namespace

TEST_CASE("activation derivatives match finite differences") {
  for (auto kind : {ActivationKind::relu, ActivationKind::softplus, ActivationKind::quad_relu}) {
    const Activation act{kind};
    for (double z : {-3.0, -0.7, 0.4, 2.5}) {
      CHECK(act.derivative(z) == doctest::Approx(central([&](double u) { return act.value(u); }, z)).epsilon(1e-6));
      CHECK(act.second_derivative(z) ==
            doctest::Approx(central([&](double u) { return act.derivative(u); }, z)).epsilon(1e-5));
    }
  }
}

TEST_CASE("activation edge values") {
  const Activation relu{ActivationKind::relu}, sp{ActivationKind::softplus}, q{ActivationKind::quad_relu};
  CHECK(relu.derivative(0.0) == 1.0);  // indicator 1(z >= 0)
  CHECK(sp.value(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(sp.value(800.0) == doctest::Approx(800.0));
  CHECK(sp.value(-800.0) == 0.0);
  CHECK(std::isfinite(sp.derivative(-800.0)));
  CHECK(q.value(-1.0) == 0.0);
  CHECK(q.value(3.0) == 9.0);
  CHECK(q.derivative_bound(1.5) == 3.0);
  CHECK(sp.derivative_lipschitz().value() == 1.0);
  CHECK_FALSE(relu.derivative_lipschitz().has_value());
  CHECK(Activation::parse("quad_relu").kind == ActivationKind::quad_relu);
  CHECK_THROWS_AS(Activation::parse("tanh"), std::invalid_argument);
}

TEST_CASE("logistic loss") {
  const LossFn l;
  CHECK(loss(l, 0.0, 1) == doctest::Approx(std::log(2.0)));
  CHECK(loss(l, 0.0, -1) == doctest::Approx(std::log(2.0)));
  CHECK(loss_grad(l, 0.0, 1) == doctest::Approx(-0.5));
  CHECK(loss(l, 1000.0, 1) == 0.0);
  CHECK(loss(l, -1000.0, 1) == doctest::Approx(1000.0));
  CHECK(loss_grad(l, 2.0, -1) == doctest::Approx(central([&](double f) { return l.value(f, -1); }, 2.0)));
  CHECK_THROWS_AS(loss(l, 0.0, 0), std::invalid_argument);
}

TEST_CASE("deep init shapes and scales") {
  RngStream rng(5);
  const DeepNetParams p = init_deep(rng, 512, 10, 3);
  CHECK(p.width() == 512);
  CHECK(p.input_dim() == 10);
  CHECK(p.depth() == 3);
  // entry variance 2/m
  CHECK(p.layers[0].squaredNorm() / (512.0 * 512.0) == doctest::Approx(2.0 / 512).epsilon(0.02));
  CHECK(p.output.squaredNorm() / 512.0 == doctest::Approx(1.0).epsilon(0.15));

  CHECK_THROWS(init_deep(rng, 4, 10, 1));
  CHECK_THROWS(init_deep(rng, 64, 10, 0));
}

TEST_CASE("deep forward rejects non-unit inputs") {
  RngStream rng(5);
  const DeepNetParams p = init_deep(rng, 64, 4, 1);
  CHECK_THROWS_AS(forward_deep(p, Vec::Ones(4)), std::invalid_argument);
  CHECK_THROWS_AS(forward_deep(p, Vec::Ones(3).normalized()), std::invalid_argument);
}

TEST_CASE("hidden norms: relu input layer ~1, linear input layer ~sqrt 2") {
  RngStream rng(9);
  const Vec x = numerics::sample_sphere(rng, 10);
  const auto relu_fw = forward_deep(init_deep(rng, 4096, 10, 1), x);
  const auto lin_fw = forward_deep(init_deep(rng, 4096, 10, 1, InputLayer::linear), x);
  CHECK(relu_fw.post[0].norm() == doctest::Approx(1.0).epsilon(0.1));
  CHECK(lin_fw.post[0].norm() == doctest::Approx(std::sqrt(2.0)).epsilon(0.1));
}

TEST_CASE("deep gradients match finite differences") {
  RngStream rng(13);
  const DeepNetParams p = init_deep(rng, 32, 5, 2);
  const Vec x = numerics::sample_sphere(rng, 5);
  const auto grads = grad_deep(p, x);
  const double h = 1e-7;
  int checked = 0;
  for (int l = 0; l < 2; ++l) {
    for (int k = 0; k < 20; ++k) {
      const auto i = static_cast<Eigen::Index>(rng.below(32));
      const auto j = static_cast<Eigen::Index>(rng.below(32));
      DeepNetParams a = p, b = p;
      a.layers[l](i, j) += h;
      b.layers[l](i, j) -= h;
      const auto fa = forward_deep(a, x), fb = forward_deep(b, x), f0 = forward_deep(p, x);
      bool same = true;
      for (int q = 1; q <= 2; ++q) same = same && fa.pattern(q) == f0.pattern(q) && fb.pattern(q) == f0.pattern(q);
      if (!same) continue;
      CHECK(grads[l](i, j) == doctest::Approx((fa.f - fb.f) / (2 * h)).epsilon(1e-5).scale(1e-6));
      ++checked;
    }
  }
  CHECK(checked > 30);
}

TEST_CASE("deep input gradient is a rank-one chain") {
  RngStream rng(17);
  const DeepNetParams p = init_deep(rng, 64, 6, 2);
  const Vec x = numerics::sample_sphere(rng, 6);
  const auto fw = forward_deep(p, x);
  const Vec g = input_grad_deep(p, fw);
  // f is positively homogeneous of degree 1 in x, so <grad, x> = f
  CHECK(g.dot(x) == doctest::Approx(fw.f).epsilon(1e-10));
}

TEST_CASE("two-layer init is symmetric and outputs zero") {
  for (auto law : {InitLaw::gaussian_identity, InitLaw::sphere_sqrt_d}) {
    RngStream rng(21);
    const TwoLayerParams p = init_two_layer(rng, 64, 5, law);
    CHECK(p.width() == 64);
    CHECK(p.w == p.wbar);
    for (auto kind : {ActivationKind::relu, ActivationKind::softplus, ActivationKind::quad_relu}) {
      for (int k = 0; k < 10; ++k) CHECK(forward_two_layer(p, Activation{kind}, numerics::sample_sphere(rng, 5)) == 0.0);
    }
    if (law == InitLaw::sphere_sqrt_d) {
      for (Eigen::Index r = 0; r < p.pairs(); ++r) CHECK(p.w.row(r).norm() == doctest::Approx(std::sqrt(5.0)));
    }
  }
  RngStream rng(1);
  CHECK_THROWS(init_two_layer(rng, 7, 3, InitLaw::gaussian_identity));
  CHECK(parse_init_law("sphere_sqrt_d") == InitLaw::sphere_sqrt_d);
  CHECK_THROWS(parse_init_law("uniform"));
}

TEST_CASE("two-layer weight and input gradients match finite differences") {
  RngStream rng(23);
  TwoLayerParams p = init_two_layer(rng, 16, 4, InitLaw::gaussian_identity);
  p.w += 0.3 * numerics::gaussian_mat(rng, 8, 4, 1.0);
  const Activation act{ActivationKind::softplus};
  const Vec x = numerics::sample_sphere(rng, 4);
  const TwoLayerGrad g = grad_two_layer(p, act, x);
  const double h = 1e-5;
  for (Eigen::Index r = 0; r < 8; ++r) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      TwoLayerParams a = p, b = p;
      a.w(r, j) += h;
      b.w(r, j) -= h;
      CHECK(g.w(r, j) == doctest::Approx((forward_two_layer(a, act, x) - forward_two_layer(b, act, x)) / (2 * h))
                             .epsilon(1e-7)
                             .scale(1e-3));
      a = p;
      b = p;
      a.wbar(r, j) += h;
      b.wbar(r, j) -= h;
      CHECK(g.wbar(r, j) ==
            doctest::Approx((forward_two_layer(a, act, x) - forward_two_layer(b, act, x)) / (2 * h))
                .epsilon(1e-7)
                .scale(1e-3));
    }
  }
  const Vec gi = input_grad_two_layer(p, act, x);
  for (Eigen::Index j = 0; j < 4; ++j) {
    Vec a = x, b = x;
    a(j) += h;
    b(j) -= h;
    CHECK(gi(j) == doctest::Approx((forward_two_layer(p, act, a) - forward_two_layer(p, act, b)) / (2 * h)).epsilon(1e-7));
  }
}

TEST_CASE("distances and inner products") {
  RngStream rng(2);
  const TwoLayerParams p = init_two_layer(rng, 8, 3, InitLaw::gaussian_identity);
  TwoLayerParams q = p;
  q.w(0, 0) += 3.0;
  q.wbar(1, 2) -= 4.0;
  CHECK(distance_fro(p, q) == doctest::Approx(5.0));
  TwoLayerGrad g{numerics::Mat::Ones(4, 3), numerics::Mat::Ones(4, 3)};
  CHECK(inner_displacement(g, q, p) == doctest::Approx(-1.0));
  CHECK_THROWS(distance_fro(std::vector<numerics::Mat>(2), std::vector<numerics::Mat>(3)));
}
