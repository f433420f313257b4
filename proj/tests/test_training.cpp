#include <cmath>
#include <sstream>

#include "advlab/training.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace advlab;
using namespace advlab::training;
using numerics::RngStream;

namespace {

Dataset toy(std::size_t n = 8, Eigen::Index d = 5, double delta = 0.05, std::uint64_t seed = 7) {
  RngStream rng(seed);
  return attacks::make_toy_dataset(rng, n, d, delta);
}

AttackSpec pgd(int steps = 3, double step = 0.025) {
  AttackSpec s;
  s.kind = attacks::AttackKind::pgd;
  s.steps = steps;
  s.step_size = step;
  return s;
}

TrainConfig deep_cfg(Eigen::Index m = 64, int H = 2, int T = 20) {
  TrainConfig c;
  c.arch = DeepArch{m, 5, H};
  c.alpha = 0.5 / static_cast<double>(m);
  c.T = T;
  c.R = 0.5;
  c.attack = pgd();
  c.seed = 3;
  return c;
}

TrainConfig two_cfg(Eigen::Index m = 64, int T = 20) {
  TrainConfig c;
  c.arch = TwoLayerArch{m, 5, {models::ActivationKind::softplus}, models::InitLaw::gaussian_identity};
  c.alpha = 1.0;
  c.T = T;
  c.R = 1.0;
  c.attack = pgd();
  c.seed = 4;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c = deep_cfg();
  CHECK_NOTHROW(c.validate());
  c.alpha = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = deep_cfg();
  c.T = 0;
  CHECK_THROWS(c.validate());
  c = deep_cfg();
  c.R = 0.0;
  CHECK_THROWS(c.validate());
  c = deep_cfg();
  c.arch = DeepArch{3, 5, 1};
  CHECK_THROWS(c.validate());
  c = two_cfg();
  c.arch = TwoLayerArch{63, 5};
  CHECK_THROWS(c.validate());
  c = deep_cfg();
  c.attack.steps = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("training rejects mismatched or incompatible data") {
  CHECK_THROWS(train(deep_cfg(), toy(8, 4)));
  Dataset bad = toy();
  bad.examples[1].x = bad.examples[0].x;
  CHECK_THROWS_WITH_AS(train(deep_cfg(), bad), doctest::Contains("not compatible"), std::invalid_argument);
  TrainConfig relu_two = two_cfg();
  std::get<TwoLayerArch>(relu_two.arch).act = {models::ActivationKind::relu};
  CHECK_THROWS(train_plain(relu_two, toy()));
  CHECK_THROWS(train_projected(two_cfg(), toy()));
  Dataset ball = toy();
  ball.geometry = attacks::Geometry::euclidean_ball;
  CHECK_THROWS_WITH(train(deep_cfg(), ball), doctest::Contains("lift"));
}

TEST_CASE("ball projection is radial and idempotent") {
  RngStream rng(1);
  const auto init = models::init_deep(rng, 32, 4, 2);
  auto p = displace_deep(init, rng, 2.0);
  const double R = 3.0;  // radius R / sqrt(32) ~ 0.53
  const auto q = project_ball(p, init, R);
  for (int h = 0; h < 2; ++h) {
    CHECK((q.layers[h] - init.layers[h]).norm() == doctest::Approx(R / std::sqrt(32.0)));
    // same direction as before projection
    const auto a = (q.layers[h] - init.layers[h]).normalized();
    const auto b = (p.layers[h] - init.layers[h]).normalized();
    CHECK((a - b).norm() < 1e-12);
  }
  CHECK(q.input == init.input);
  CHECK(q.output == init.output);
  auto r = q;
  CHECK_FALSE(project_ball_inplace(r, init, R));
  CHECK(r.layers[0] == q.layers[0]);
  CHECK(project_ball_inplace(p, init, R));
}

TEST_CASE("projected training stays in the ball at every step") {
  const TrainConfig cfg = deep_cfg(64, 2, 30);
  TrainConfig hot = cfg;
  hot.alpha = 0.5;  // large steps force the projection on
  for (const auto& c : {cfg, hot}) {
    const TrainRun run = train(c, toy());
    REQUIRE(run.records.size() == static_cast<std::size_t>(c.T));
    for (const auto& r : run.records) {
      for (double e : r.excursion) CHECK(e <= c.R / 8.0 + 1e-10);
    }
  }
  const TrainRun run = train(hot, toy());
  int active = 0;
  for (const auto& r : run.records) active += r.proj_active;
  CHECK(active > 0);
}

TEST_CASE("records are indexed 1..T and the argmin is consistent") {
  const TrainRun run = train(deep_cfg(), toy());
  REQUIRE(run.status == RunStatus::ok);
  for (std::size_t k = 0; k < run.records.size(); ++k) CHECK(run.records[k].t == static_cast<int>(k) + 1);
  double best = 1e300;
  int arg = 0;
  for (const auto& r : run.records) {
    if (r.surrogate < best) {
      best = r.surrogate;
      arg = r.t;
    }
    CHECK(r.surrogate >= r.plain - 1e-12);
  }
  CHECK(run.min_surrogate == best);
  CHECK(run.argmin == arg);
}

TEST_CASE("alpha zero gives a constant log for every attack kind") {
  for (auto kind : {attacks::AttackKind::identity, attacks::AttackKind::random, attacks::AttackKind::fgsm,
                    attacks::AttackKind::pgd}) {
    TrainConfig c = deep_cfg(32, 1, 5);
    c.alpha = 0.0;
    c.attack.kind = kind;
    const TrainRun run = train(c, toy());
    for (const auto& r : run.records) {
      CHECK(r.surrogate == run.records.front().surrogate);
      CHECK(r.excursion.front() == 0.0);
    }
  }
}

TEST_CASE("identity attack makes surrogate and plain loss equal") {
  TrainConfig c = two_cfg(32, 5);
  c.attack = AttackSpec{};
  const TrainRun run = train(c, toy());
  for (const auto& r : run.records) CHECK(r.surrogate == doctest::Approx(r.plain).epsilon(1e-14));
}

TEST_CASE("two-layer training decreases the loss and logs 3R crossings") {
  TrainConfig c = two_cfg(64, 60);
  c.R = 0.05;
  const TrainRun run = train(c, toy());
  REQUIRE(run.status == RunStatus::ok);
  CHECK(run.records.back().surrogate < std::log(2.0));
  CHECK(run.records.back().exceeds_3r);
  for (const auto& r : run.records) CHECK(r.exceeds_3r == (r.excursion[0] > 3.0 * c.R));
}

TEST_CASE("divergence is reported") {
  TrainConfig c = two_cfg(16, 50);
  c.alpha = 1e6;
  c.divergence_limit = 50.0;
  const TrainRun run = train(c, toy());
  CHECK(run.status == RunStatus::diverged);
  CHECK(run.records.size() < 50);
  CHECK(run.message.find("surrogate loss") != std::string::npos);
  CHECK(train_summary_json(c, run).find("\"diverged\"") != std::string::npos);
}

TEST_CASE("logs are identical across worker counts") {
  const Dataset ds = toy(40, 5, 0.05, 9);  // several attack chunks
  for (const TrainConfig& base : {deep_cfg(64, 2, 8), two_cfg(64, 8)}) {
    TrainConfig one = base, four = base;
    four.workers = 4;
    CHECK(train_csv(train(one, ds)) == train_csv(train(four, ds)));
  }
}

TEST_CASE("csv layout") {
  const std::string deep = train_csv(train(deep_cfg(32, 2, 3), toy()));
  CHECK(deep.rfind("t,L_A,L_plain,excursion_1,excursion_2,proj_active\n", 0) == 0);
  const std::string two = train_csv(train(two_cfg(32, 3), toy()));
  CHECK(two.rfind("t,L_A,L_plain,excursion_1,proj_active,exceeds_3R\n", 0) == 0);
  std::istringstream in(two);
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("summary json") {
  const TrainConfig c = deep_cfg(32, 1, 4);
  const TrainRun run = train(c, toy());
  const auto j = nlohmann::json::parse(train_summary_json(c, run));
  CHECK(j["status"] == "ok");
  CHECK(j["argmin_step"] == run.argmin);
  CHECK(j["config"]["arch"]["kind"] == "deep");
  CHECK(j["config"]["attack"]["kind"] == "pgd");
  CHECK_FALSE(j["config"].contains("workers"));
}

TEST_CASE("lifted training on Euclidean-ball data") {
  Dataset ds;
  ds.delta = 0.05;
  ds.geometry = attacks::Geometry::euclidean_ball;
  for (int i = 0; i < 6; ++i) {
    numerics::Vec x(2);
    x << 0.3 * i, 0.0;
    ds.examples.push_back({x, i % 2 ? -1 : 1});
  }
  TrainConfig c = two_cfg(32, 10);
  c.arch = TwoLayerArch{32, 2, {models::ActivationKind::softplus}, models::InitLaw::gaussian_identity};
  c.lift = attacks::Lift{numerics::Vec::Constant(2, 0.0), 1.0};
  const TrainRun run = train(c, ds);
  CHECK(run.status == RunStatus::ok);
  CHECK(std::get<models::TwoLayerParams>(run.init).input_dim() == 3);
}

TEST_CASE("two-layer near-linearity stays under the softplus curvature bound") {
  // residual <= |Delta|_F^2 / (8 sqrt m) for unit x, from softplus'' <= 1/4
  const models::Activation act{models::ActivationKind::softplus};
  RngStream rng(17);
  for (Eigen::Index m : {16, 256}) {
    const auto p0 = models::init_two_layer(rng, m, 6, models::InitLaw::gaussian_identity);
    for (double radius : {0.1, 1.0, 10.0}) {
      const auto p1 = displace_two_layer(p0, rng, radius);
      CHECK(models::distance_fro(p0, p1) == doctest::Approx(radius));
      for (int k = 0; k < 20; ++k) {
        const auto x = numerics::sample_sphere(rng, 6);
        const double r = near_linearity_residual(p0, p1, act, x);
        CHECK(r * std::sqrt(static_cast<double>(m)) / (radius * radius) <= 0.125 + 1e-12);
      }
    }
  }
}

TEST_CASE("deep near-linearity is exact along zero and tiny displacements") {
  RngStream rng(18);
  const auto p = models::init_deep(rng, 64, 5, 2);
  const auto x = numerics::sample_sphere(rng, 5);
  CHECK(near_linearity_residual(p, p, x) == 0.0);
  const auto q = displace_deep(p, rng, 1e-9);
  CHECK(near_linearity_residual(p, q, x) < 1e-14);
  const auto far = displace_deep(p, rng, 1.0);
  for (int h = 0; h < 2; ++h) CHECK((far.layers[h] - p.layers[h]).norm() == doctest::Approx(1.0));
}

TEST_CASE("gradient checks") {
  RngStream rng(5);
  const auto deep = gradcheck_deep(64, 5, 2, 10, rng);
  CHECK(deep.cases.size() == 10);
  CHECK(deep.max_rel_error <= 1e-5);
  const auto two = gradcheck_two_layer(16, 4, {models::ActivationKind::softplus}, 5, rng);
  CHECK(two.cases.size() == 5 * 16 * 4);
  CHECK(two.max_rel_error <= 1e-7);
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 1e-9, 1e-6) == doctest::Approx(1e-3));
  CHECK_THROWS(gradcheck_deep(8, 2, 1, 0, rng));
}

TEST_CASE("initialization diagnostics") {
  RngStream rng(6);
  const auto p = models::init_deep(rng, 1024, 10, 2);
  const LemmaReport rep = lemma_diagnostics(p, 50, rng);
  CHECK(rep.output_norm_ok());
  CHECK(rep.hidden_norm_ok());
  CHECK(rep.backward_ok());
  CHECK(rep.layer_grad_ok());
  CHECK(rep.ok());
  RngStream a(7), b(7);
  CHECK(lemma_diagnostics(p, 10, a, 1).backward_ratio_max == lemma_diagnostics(p, 10, b, 3).backward_ratio_max);

  RngStream rl(6);
  const auto lin = models::init_deep(rl, 1024, 10, 1, models::InputLayer::linear);
  RngStream r2(8);
  CHECK_FALSE(lemma_diagnostics(lin, 50, r2).hidden_norm_ok());
}
