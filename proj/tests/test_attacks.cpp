#include <cmath>
#include <filesystem>
#include <fstream>

#include "advlab/attacks.hpp"
#include "doctest.h"

using namespace advlab;
using namespace advlab::attacks;
using numerics::RngStream;
using numerics::Vec;

namespace {

Vec unit2(double angle) {
  Vec v(2);
  v << std::cos(angle), std::sin(angle);
  return v;
}

AttackSpec pgd_spec(int steps, double step, int restarts = 1, double decay = 1.0, std::uint64_t seed = 1) {
  AttackSpec s;
  s.kind = AttackKind::pgd;
  s.steps = steps;
  s.step_size = step;
  s.restarts = restarts;
  s.step_decay = decay;
  s.rng = RngStream(seed);
  return s;
}

}  // namespace

TEST_CASE("cap projection lands in the cap") {
  RngStream rng(3);
  for (double delta : {0.01, 0.3, 1.0, 1.9}) {
    for (int k = 0; k < 200; ++k) {
      const PerturbSet cap = PerturbSet::cap(numerics::sample_sphere(rng, 6), delta);
      const Vec x = 3.0 * numerics::gaussian_vec(rng, 6, 1.0);
      const Vec p = cap.project(x);
      CHECK(cap.contains(p, 1e-10));
      CHECK(cap.contains(cap.sample(rng), 1e-10));
      CHECK(cap.contains(cap.quasi_sample(static_cast<std::uint64_t>(k)), 1e-10));
    }
  }
}

TEST_CASE("cap projection edge cases") {
  const Vec c = unit2(0.3);
  SUBCASE("points already inside are fixed") {
    const PerturbSet cap = PerturbSet::cap(c, 0.2);
    const Vec x = unit2(0.35);
    CHECK(cap.project(x) == x);
  }
  SUBCASE("delta zero collapses to the center") {
    CHECK(PerturbSet::cap(c, 0.0).project(unit2(2.0)) == c);
  }
  SUBCASE("far points land in the cap on their own side") {
    const PerturbSet cap = PerturbSet::cap(c, 0.5);
    CHECK(cap.project(-c).isApprox(c, 1e-15));  // antipode: every direction is equally near
    const Vec p = cap.project(unit2(0.3 + 2.5));
    CHECK(cap.contains(p, 1e-10));
    CHECK(p(1) > c(1));
  }
  SUBCASE("whole sphere just normalizes") {
    const PerturbSet cap = PerturbSet::cap(c, 2.0);
    CHECK(cap.project(Vec(3.0 * unit2(2.0))).isApprox(unit2(2.0)));
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(project_cap(PerturbSet::cap(c, 0.1), Vec::Ones(3)), std::invalid_argument);
  }
}

TEST_CASE("ball projection") {
  const PerturbSet ball = PerturbSet::ball(Vec::Zero(3), 0.5);
  CHECK(ball.project(Vec::Constant(3, 0.1)) == Vec::Constant(3, 0.1));
  CHECK(ball.project(Vec::Constant(3, 1.0)).norm() == doctest::Approx(0.5));
  RngStream rng(1);
  for (int k = 0; k < 100; ++k) CHECK(ball.contains(ball.sample(rng)));
}

TEST_CASE("pgd on a linear model matches a dense arc grid") {
  // f(x) = v.x, y = +1: the worst point minimises v.x on the arc.
  for (double phi : {0.0, 1.0, 2.5}) {
    for (double delta : {0.05, 0.4}) {
      const Vec c = unit2(phi);
      const Vec v = unit2(phi + 0.8);
      const PerturbSet cap = PerturbSet::cap(c, delta);
      const LinearPredictor model(v);
      const double half = 2.0 * std::asin(delta / 2.0);
      double grid_best = -1e300;
      for (int k = 0; k < 10000; ++k) {
        const Vec x = unit2(phi - half + 2.0 * half * k / 9999.0);
        grid_best = std::max(grid_best, LossFn{}.value(model.value(x), 1));
      }
      const auto res = attack(pgd_spec(100, delta / 4, 1, 0.95), model, LossFn{}, cap, 1, RngStream(2));
      CHECK(cap.contains(res.point, 1e-10));
      CHECK(res.loss >= grid_best - 1e-6);
      CHECK(res.loss <= grid_best + 1e-6);
    }
  }
}

TEST_CASE("pgd on a linear model in higher dimension approaches the analytic optimum") {
  RngStream rng(8);
  for (int k = 0; k < 20; ++k) {
    const Vec c = numerics::sample_sphere(rng, 8);
    const Vec v = numerics::sample_sphere(rng, 8);
    const double delta = 0.2;
    // minimiser: rotate c by the cap angle toward the tangential part of -v
    Vec t = -v + v.dot(c) * c;
    t.normalize();
    const double psi = 2.0 * std::asin(delta / 2.0);
    const Vec best = std::cos(psi) * c + std::sin(psi) * t;
    const double want = LossFn{}.value(v.dot(best), 1);
    const auto res = attack(pgd_spec(300, delta / 4), LinearPredictor(v), LossFn{},
                            PerturbSet::cap(c, delta), 1, rng.fork(k));
    // ball-then-renormalize settles slightly inside the cap boundary, so pgd
    // stops a little short of the true maximum but never above it
    CHECK(res.loss <= want + 1e-12);
    CHECK(res.loss == doctest::Approx(want).epsilon(3e-3));
  }
}

TEST_CASE("attack kinds on a linear model") {
  const Vec c = unit2(0.0);
  const PerturbSet cap = PerturbSet::cap(c, 0.3);
  const LinearPredictor model(unit2(1.2));
  const LossFn l;
  const double clean = l.value(model.value(c), -1);
  AttackSpec id;
  CHECK(attack(id, model, l, cap, -1, RngStream(1)).loss == clean);
  CHECK(attack(id, model, l, cap, -1, RngStream(1)).point == c);

  AttackSpec fgsm;
  fgsm.kind = AttackKind::fgsm;
  const auto f = attack(fgsm, model, l, cap, -1, RngStream(1));
  CHECK(cap.contains(f.point));
  CHECK(f.loss > clean);

  AttackSpec rnd;
  rnd.kind = AttackKind::random;
  const auto r1 = attack(rnd, model, l, cap, -1, RngStream(5));
  const auto r2 = attack(rnd, model, l, cap, -1, RngStream(5));
  CHECK(r1.point == r2.point);
  CHECK(cap.contains(r1.point));

  // pgd restart 0 starts at the center, so it never loses to identity
  CHECK(attack(pgd_spec(5, 0.1), model, l, cap, -1, RngStream(1)).loss >= clean);
}

TEST_CASE("attack spec validation") {
  CHECK_THROWS(pgd_spec(0, 0.1).validate());
  CHECK_THROWS(pgd_spec(3, 0.0).validate());
  CHECK_THROWS(pgd_spec(3, 0.1, 0).validate());
  CHECK_THROWS(pgd_spec(3, 0.1, 1, 1.5).validate());
  CHECK_NOTHROW(pgd_spec(3, 0.1, 2, 0.9).validate());
  CHECK(parse_attack_kind("fgsm") == AttackKind::fgsm);
  CHECK(attack_kind_name(AttackKind::pgd) == "pgd");
  CHECK_THROWS(parse_attack_kind("cw"));
}

TEST_CASE("batched attacks match per-example attacks") {
  // GEMM and GEMV may round differently, so agreement is to rounding level.
  RngStream rng(31);
  const auto p = models::init_deep(rng, 64, 5, 2);
  const DeepPredictor model(p);
  const Dataset ds = make_toy_dataset(rng, 12, 5, 0.1);
  for (auto kind : {AttackKind::identity, AttackKind::random, AttackKind::fgsm, AttackKind::pgd}) {
    AttackSpec s = pgd_spec(7, 0.04, 3, 0.9);
    s.kind = kind;
    std::vector<PerturbSet> sets;
    std::vector<int> ys;
    std::vector<RngStream> rngs;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      sets.push_back(ds.set_of(i));
      ys.push_back(ds.examples[i].y);
      rngs.push_back(s.rng.fork(i));
    }
    const auto batch = attack_batch(s, model, LossFn{}, sets, ys, rngs);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto one = attack(s, model, LossFn{}, sets[i], ys[i], rngs[i]);
      CHECK((one.point - batch[i].point).norm() < 1e-12);
      CHECK(one.loss == doctest::Approx(batch[i].loss).epsilon(1e-12));
    }
  }
}

TEST_CASE("two-layer batched values and gradients") {
  RngStream rng(4);
  auto p = models::init_two_layer(rng, 32, 4, models::InitLaw::gaussian_identity);
  p.w += 0.2 * numerics::gaussian_mat(rng, 16, 4, 1.0);
  const TwoLayerPredictor model(p, {models::ActivationKind::softplus});
  numerics::Mat X(4, 6);
  for (int i = 0; i < 6; ++i) X.col(i) = numerics::sample_sphere(rng, 4);
  Vec f;
  numerics::Mat G;
  model.values_and_grads(X, f, G);
  for (int i = 0; i < 6; ++i) {
    Vec g;
    CHECK(model.value_and_grad(X.col(i), g) == doctest::Approx(f(i)).epsilon(1e-12));
    CHECK((g - G.col(i)).norm() < 1e-12);
  }
}

TEST_CASE("two-layer outputs at the symmetric init are exactly zero") {
  RngStream rng(14);
  const auto p = models::init_two_layer(rng, 256, 7, models::InitLaw::gaussian_identity);
  const TwoLayerPredictor model(p, {models::ActivationKind::softplus});
  numerics::Mat X(7, 40);
  for (int i = 0; i < 40; ++i) X.col(i) = numerics::sample_sphere(rng, 7);
  Vec f;
  numerics::Mat G;
  model.values_and_grads(X, f, G);
  Vec g;
  for (int i = 0; i < 40; ++i) {
    CHECK(f(i) == 0.0);
    CHECK(model.value_and_grad(X.col(i), g) == 0.0);
  }
}

TEST_CASE("lift is unit norm and its pullback is the input gradient") {
  Lift lift{Vec::Constant(3, 0.5), 2.0};
  RngStream rng(6);
  const Vec w = numerics::gaussian_vec(rng, 4, 1.0);
  const LinearPredictor inner(w);
  const LiftedPredictor model(inner, lift);
  for (int k = 0; k < 10; ++k) {
    const Vec x = numerics::gaussian_vec(rng, 3, 1.0);
    CHECK(lift.apply(x).norm() == doctest::Approx(1.0));
    Vec g;
    model.value_and_grad(x, g);
    for (int j = 0; j < 3; ++j) {
      Vec a = x, b = x;
      a(j) += 1e-6;
      b(j) -= 1e-6;
      CHECK(g(j) == doctest::Approx((model.value(a) - model.value(b)) / 2e-6).epsilon(1e-6));
    }
  }
}

TEST_CASE("toy datasets are compatible; overlapping pairs are reported") {
  RngStream rng(7);
  const Dataset ds = make_toy_dataset(rng, 16, 10, 0.05);
  CHECK(ds.size() == 16);
  CHECK(check_compatible(ds).compatible);
  for (const auto& e : ds.examples) CHECK(e.x.norm() == doctest::Approx(1.0));

  Dataset bad;
  bad.delta = 0.1;
  bad.examples = {{unit2(0.0), 1}, {unit2(0.15), -1}, {unit2(3.0), 1}};
  const auto rep = check_compatible(bad);
  CHECK_FALSE(rep.compatible);
  REQUIRE(rep.violations.size() == 1);
  CHECK(rep.violations[0] == std::make_pair(std::size_t{0}, std::size_t{1}));
  // same labels may overlap
  bad.examples[1].y = 1;
  CHECK(check_compatible(bad).compatible);
}

TEST_CASE("dataset JSONL round trip and validation") {
  const auto dir = std::filesystem::temp_directory_path() / "advlab_test_attacks";
  std::filesystem::create_directories(dir);
  RngStream rng(9);
  const Dataset ds = make_toy_dataset(rng, 5, 3, 0.07);
  write_dataset_jsonl(dir / "ds.jsonl", ds);
  const Dataset back = read_dataset_jsonl(dir / "ds.jsonl");
  CHECK(back.delta == ds.delta);
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back.examples[i].x == ds.examples[i].x);
    CHECK(back.examples[i].y == ds.examples[i].y);
  }
  {
    std::ofstream out(dir / "bad.jsonl");
    out << "{\"d\": 2, \"delta\": 0.1}\n{\"x\": [1.0, 1.0], \"y\": 1}\n";
  }
  CHECK_THROWS(read_dataset_jsonl(dir / "bad.jsonl"));
  {
    std::ofstream out(dir / "label.jsonl");
    out << "{\"d\": 2, \"delta\": 0.1}\n{\"x\": [1.0, 0.0], \"y\": 0}\n";
  }
  CHECK_THROWS(read_dataset_jsonl(dir / "label.jsonl"));
}

TEST_CASE("robust oracle dominates surrogate losses and grows with budget") {
  RngStream rng(12);
  const auto p = models::init_deep(rng, 64, 5, 1);
  const DeepPredictor model(p);
  const Dataset ds = make_toy_dataset(rng, 8, 5, 0.1);
  const AttackSpec pgd = pgd_spec(10, 0.025, 1, 1.0, 77);
  const double sur = surrogate_loss(pgd, model, ds, LossFn{});
  const double plain = plain_loss(model, ds, LossFn{});
  const double o1 = robust_loss_oracle(model, ds, LossFn{}, 1, RngStream(3), 1, {pgd});
  const double o4 = robust_loss_oracle(model, ds, LossFn{}, 4, RngStream(3), 1, {pgd});
  CHECK(sur >= plain);
  CHECK(o1 >= sur);
  CHECK(o4 >= o1);
  CHECK(robust_loss_oracle(model, ds, LossFn{}, 2, RngStream(3), 3) ==
        robust_loss_oracle(model, ds, LossFn{}, 2, RngStream(3), 1));
  CHECK(surrogate_loss(pgd, model, ds, LossFn{}, 4) == sur);
  CHECK_THROWS(robust_loss_oracle(model, ds, LossFn{}, 0, RngStream(3)));
}

TEST_CASE("delta zero makes every attack the identity") {
  RngStream rng(2);
  const auto p = models::init_deep(rng, 32, 4, 1);
  const DeepPredictor model(p);
  Dataset ds = make_toy_dataset(rng, 6, 4, 0.0);
  const double plain = plain_loss(model, ds, LossFn{});
  CHECK(surrogate_loss(pgd_spec(5, 0.1), model, ds, LossFn{}) == doctest::Approx(plain).epsilon(1e-14));
  CHECK(robust_loss_oracle(model, ds, LossFn{}, 1, RngStream(1)) == doctest::Approx(plain).epsilon(1e-14));
}
