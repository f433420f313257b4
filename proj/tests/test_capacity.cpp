#include <cmath>

#include "advlab/capacity.hpp"
#include "doctest.h"

using namespace advlab;
using namespace advlab::capacity;
using numerics::Vec;

TEST_CASE("grid layout") {
  const GridDataset g = build_grid(5, 3, 0.1, 0.025);
  CHECK(g.clusters() == 2);
  CHECK(g.size() == 6);
  CHECK(g.centers[1](0) == doctest::Approx(1.2));
  CHECK((g.point(1, 2) - g.centers[1]).norm() == doctest::Approx(0.025));
  CHECK(g.point(1, 2)(2) == doctest::Approx(0.025));
  CHECK(labeling_count(g) == 64);
}

TEST_CASE("grid argument checks") {
  CHECK_THROWS(build_grid(1, 2, 0.1, 0.02));
  CHECK_THROWS(build_grid(4, 0, 0.1, 0.02));
  CHECK_THROWS(build_grid(4, 2, 0.0, 0.0));
  CHECK_THROWS(build_grid(4, 2, 0.1, 0.2));
  CHECK_NOTHROW(build_grid(4, 2, 0.1, 0.1));
}

TEST_CASE("labelings enumerate in lexicographic order") {
  CHECK(labeling_from_id(0, 3) == Labeling{1, 1, 1});
  CHECK(labeling_from_id(1, 3) == Labeling{1, 1, -1});
  CHECK(labeling_from_id(4, 3) == Labeling{-1, 1, 1});
  CHECK(labeling_from_id(7, 3) == Labeling{-1, -1, -1});
  CHECK_THROWS(labeling_from_id(0, 64));
}

TEST_CASE("separating balls satisfy every geometric property for all labelings") {
  for (auto [n, d] : {std::pair{4, 2}, std::pair{4, 3}, std::pair{6, 2}, std::pair{2, 4}}) {
    const GridDataset g = build_grid(n, d, 0.05, 0.0125);
    for (std::uint64_t id = 0; id < labeling_count(g); ++id) {
      const Labeling l = labeling_from_id(id, g.size());
      const Separation sep = separating_balls(g, l);
      REQUIRE_MESSAGE(sep.ok, "labeling " << id);
      CHECK(sep.min_ball_gap > 0.0);
      for (std::size_t ci = 0; ci < g.clusters(); ++ci) {
        const BallPair& bp = sep.pairs[ci];
        // every point inside the ball of its own label
        for (Eigen::Index j = 0; j < d; ++j) {
          const Vec& ctr = l[ci * d + j] > 0 ? bp.pos_center : bp.neg_center;
          CHECK((g.point(ci, j) - ctr).norm() <= g.delta + 1e-12);
        }
        if (!bp.pos_sentinel && !bp.neg_sentinel) {
          const Vec unit = bp.normal / bp.normal.norm();
          CHECK(unit.dot(bp.pos_center - g.centers[ci]) > g.delta);
          CHECK(unit.dot(bp.neg_center - g.centers[ci]) < -g.delta);
        }
      }
      // pairwise disjoint, checked independently of min_ball_gap
      std::vector<Vec> cs;
      for (const auto& bp : sep.pairs) {
        cs.push_back(bp.pos_center);
        cs.push_back(bp.neg_center);
      }
      for (std::size_t a = 0; a < cs.size(); ++a) {
        for (std::size_t b = a + 1; b < cs.size(); ++b) CHECK((cs[a] - cs[b]).norm() > 2 * g.delta);
      }
    }
  }
}

TEST_CASE("nearest-ball classifier") {
  const GridDataset g = build_grid(4, 2, 0.05, 0.0125);
  const Labeling l = labeling_from_id(6, g.size());  // {+1, -1, -1, +1}
  const Separation sep = separating_balls(g, l);
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(ball_classify(sep.pairs, g.points[k]) == l[k]);
  CHECK(ball_classify(sep.pairs, sep.pairs[0].neg_center) == -1);
}

TEST_CASE("robust shattering with the ball classifier") {
  const GridDataset g = build_grid(4, 2, 0.05, 0.0125);
  const auto rows = exhaustive_ball_check(g, 50, 2);
  REQUIRE(rows.size() == 16);
  for (const auto& r : rows) {
    CHECK(r.separated);
    CHECK(r.shatter.pass);
    CHECK(r.shatter.probes > 0);
    CHECK(r.shatter.min_margin == 1.0);
  }
  CHECK(labeling_csv(rows) == labeling_csv(exhaustive_ball_check(g, 50, 1)));
  CHECK(labeling_csv(rows).rfind("labeling_id,separated,pass,probes,failures,min_margin,min_ball_gap\n", 0) == 0);
}

TEST_CASE("a wrong classifier fails the check") {
  const GridDataset g = build_grid(4, 2, 0.05, 0.0125);
  const Labeling l = labeling_from_id(3, g.size());
  const Separation sep = separating_balls(g, l);
  const auto r = robust_shatter_check(g, sep, l, [](const Vec&) { return 1.0; }, 10);
  CHECK_FALSE(r.pass);
  CHECK(r.failures > 0);
  CHECK(r.min_margin == -1.0);
  CHECK_THROWS(robust_shatter_check(g, sep, l, [](const Vec&) { return 1.0; }, -1));
}

TEST_CASE("grid lift keeps every probe inside the unit ball before normalization") {
  const GridDataset g = build_grid(6, 3, 0.05, 0.0125);
  const auto lift = grid_lift(g);
  const Separation sep = separating_balls(g, labeling_from_id(5, g.size()));
  for (const auto& bp : sep.pairs) {
    for (const Vec* c : {&bp.pos_center, &bp.neg_center}) {
      if (c == &bp.pos_center ? bp.pos_sentinel : bp.neg_sentinel) continue;
      CHECK(lift.scale * ((*c - lift.shift).norm() + g.delta) <= 1.0);
    }
  }
}

TEST_CASE("grid as dataset") {
  const GridDataset g = build_grid(4, 2, 0.05, 0.0125);
  const auto ds = grid_as_dataset(g, labeling_from_id(2, 4));
  CHECK(ds.size() == 4);
  CHECK(ds.geometry == attacks::Geometry::euclidean_ball);
  CHECK(ds.examples[2].y == -1);
  CHECK_THROWS(grid_as_dataset(g, Labeling{1, 1}));
}

TEST_CASE("trained nets shatter a small grid") {
  const GridDataset g = build_grid(2, 2, 0.05, 0.0125);
  training::TrainConfig base;
  base.arch = training::TwoLayerArch{256, 2, {models::ActivationKind::softplus}, models::InitLaw::gaussian_identity};
  base.alpha = 5.0;
  base.T = 300;
  base.attack.kind = attacks::AttackKind::pgd;
  base.attack.steps = 5;
  base.attack.step_size = 0.02;
  base.seed = 1;
  int passed = 0;
  for (std::uint64_t id = 0; id < 4; ++id) {
    const auto l = labeling_from_id(id, g.size());
    const auto robust = trained_net_shatter(g, l, base, 20);
    const auto plain = trained_net_interpolate(g, l, base);
    CHECK(plain.result.pass);
    CHECK(robust.status == training::RunStatus::ok);
    passed += robust.result.pass;
  }
  CHECK(passed == 4);
}

TEST_CASE("gap table formatting") {
  std::vector<GapRow> rows{{4, 64, 16}, {6, std::nullopt, 32}};
  CHECK(gap_csv(rows) == "n,robust_min_width,plain_min_width\n4,64,16\n6,none,32\n");
}
