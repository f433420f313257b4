#include "advlab/capacity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "advlab/parallel.hpp"

namespace advlab::capacity {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Vec axis(Eigen::Index d, Eigen::Index k) {
  Vec e = Vec::Zero(d);
  e(k) = 1.0;
  return e;
}

/// Far ball for the empty side of cluster i (1-based). Sentinels sit 10 delta
/// off the cluster along e_2, which keeps them clear of every other cluster;
/// with d = 1 they go to the negative half-line, 6 delta apart.
Vec sentinel(const GridDataset& g, std::size_t i) {
  if (g.d >= 2) return g.centers[i - 1] - 10.0 * g.delta * axis(g.d, 1);
  return -(6.0 * static_cast<double>(i) + 4.0) * g.delta * axis(g.d, 0);
}

struct Placement {
  Vec center;
  std::string failure;
};

/// Ball on side `side` (+1/-1) of M_i holding the points `members`.
Placement place_on_side(const GridDataset& g, std::size_t ci, const Vec& unit_normal, const std::vector<Eigen::Index>& members,
                        double side) {
  const Vec& c = g.centers[ci];
  std::vector<Vec> tang;
  double min_height = std::numeric_limits<double>::infinity();
  std::vector<double> heights;
  for (Eigen::Index j : members) {
    const Vec off = g.epsilon * axis(g.d, j);
    const double along = unit_normal.dot(off);
    tang.push_back(off - along * unit_normal);
    heights.push_back(side * along);
    min_height = std::min(min_height, side * along);
  }
  Vec u = Vec::Zero(g.d);
  for (const Vec& t : tang) u += t;
  u /= static_cast<double>(tang.size());
  double s_max = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < tang.size(); ++k) {
    const double rho = (tang[k] - u).norm();
    if (rho >= g.delta) return {c + u + side * g.delta * unit_normal, "in-plane spread reaches delta"};
    s_max = std::min(s_max, heights[k] + std::sqrt(g.delta * g.delta - rho * rho));
  }
  if (!(s_max > g.delta)) return {c + u + side * g.delta * unit_normal, "no offset clears the hyperplane"};
  const double s = 0.5 * (g.delta + s_max);
  return {c + u + side * s * unit_normal, ""};
}

struct Ball {
  Vec center;
  int label;
  bool sentinel;
};

std::vector<Ball> balls_of(const std::vector<BallPair>& pairs) {
  std::vector<Ball> out;
  for (const auto& p : pairs) {
    out.push_back({p.pos_center, 1, p.pos_sentinel});
    out.push_back({p.neg_center, -1, p.neg_sentinel});
  }
  return out;
}

}  // namespace

GridDataset build_grid(int n, Eigen::Index d, double delta, double epsilon) {
  if (n < 2) throw std::invalid_argument("build_grid: n must be >= 2");
  if (d < 1) throw std::invalid_argument("build_grid: d must be >= 1");
  if (!(delta > 0.0)) throw std::invalid_argument("build_grid: delta must be > 0");
  if (!(epsilon > 0.0) || epsilon > delta) throw std::invalid_argument("build_grid: need 0 < epsilon <= delta");
  GridDataset g;
  g.d = d;
  g.delta = delta;
  g.epsilon = epsilon;
  const int k = n / 2;
  for (int i = 1; i <= k; ++i) {
    Vec c = Vec::Zero(d);
    c(0) = 6.0 * i * delta;
    g.centers.push_back(c);
    for (Eigen::Index j = 0; j < d; ++j) g.points.push_back(c + epsilon * axis(d, j));
  }
  const auto per = static_cast<std::size_t>(d);
  for (std::size_t a = 0; a < g.points.size(); ++a) {
    for (std::size_t b = a + 1; b < g.points.size(); ++b) {
      if (a / per == b / per) continue;
      if ((g.points[a] - g.points[b]).norm() <= 2.0 * delta) {
        throw std::invalid_argument("build_grid: points of different clusters lie within 2 delta");
      }
    }
  }
  return g;
}

Labeling labeling_from_id(std::uint64_t id, std::size_t points) {
  if (points >= 64) throw std::invalid_argument("labeling_from_id: too many points");
  Labeling l(points);
  // Point 0 is the most significant bit, so ids run in lexicographic order.
  for (std::size_t k = 0; k < points; ++k) l[k] = ((id >> (points - 1 - k)) & 1u) ? -1 : 1;
  return l;
}

std::uint64_t labeling_count(const GridDataset& grid) {
  if (grid.size() >= 64) throw std::invalid_argument("labeling_count: too many points");
  return std::uint64_t{1} << grid.size();
}

Separation separating_balls(const GridDataset& grid, const Labeling& labeling) {
  if (labeling.size() != grid.size()) throw std::invalid_argument("separating_balls: labeling length mismatch");
  for (int y : labeling) {
    if (y != 1 && y != -1) throw std::invalid_argument("separating_balls: labels must be +-1");
  }
  Separation sep;
  const double root_d = std::sqrt(static_cast<double>(grid.d));
  for (std::size_t ci = 0; ci < grid.clusters(); ++ci) {
    BallPair bp;
    bp.radius = grid.delta;
    bp.normal.resize(grid.d);
    std::vector<Eigen::Index> pos, neg;
    for (Eigen::Index j = 0; j < grid.d; ++j) {
      const int y = labeling[ci * static_cast<std::size_t>(grid.d) + static_cast<std::size_t>(j)];
      bp.normal(j) = y;
      (y > 0 ? pos : neg).push_back(j);
    }
    const Vec& c = grid.centers[ci];
    const Vec centroid = c + (grid.epsilon / static_cast<double>(grid.d)) * Vec::Ones(grid.d);
    std::string failure;
    if (neg.empty()) {
      bp.pos_center = centroid;
      bp.neg_center = sentinel(grid, ci + 1);
      bp.neg_sentinel = true;
    } else if (pos.empty()) {
      bp.neg_center = centroid;
      bp.pos_center = sentinel(grid, ci + 1);
      bp.pos_sentinel = true;
    } else {
      const Vec unit = bp.normal / root_d;
      auto p = place_on_side(grid, ci, unit, pos, 1.0);
      auto q = place_on_side(grid, ci, unit, neg, -1.0);
      bp.pos_center = p.center;
      bp.neg_center = q.center;
      failure = !p.failure.empty() ? p.failure : q.failure;
      if (failure.empty()) {
        if (!(unit.dot(bp.pos_center - c) > grid.delta) || !(unit.dot(bp.neg_center - c) < -grid.delta)) {
          failure = "a ball crosses the hyperplane";
        }
      }
    }
    if (failure.empty()) {
      for (Eigen::Index j = 0; j < grid.d; ++j) {
        const Vec& x = grid.point(ci, j);
        const Vec& ctr = bp.normal(j) > 0 ? bp.pos_center : bp.neg_center;
        if ((x - ctr).norm() > grid.delta + 1e-12) {
          failure = "a point lies outside its ball";
          break;
        }
      }
    }
    if (!failure.empty()) {
      sep.ok = false;
      sep.failed_clusters.push_back(ci);
      sep.failures.push_back("cluster " + std::to_string(ci + 1) + ": " + failure);
    }
    sep.pairs.push_back(std::move(bp));
  }
  const auto balls = balls_of(sep.pairs);
  sep.min_ball_gap = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < balls.size(); ++a) {
    for (std::size_t b = a + 1; b < balls.size(); ++b) {
      const double gap = (balls[a].center - balls[b].center).norm() - 2.0 * grid.delta;
      sep.min_ball_gap = std::min(sep.min_ball_gap, gap);
      if (!(gap > 0.0)) {
        const std::size_t cl = a / 2;
        if (std::find(sep.failed_clusters.begin(), sep.failed_clusters.end(), cl) == sep.failed_clusters.end()) {
          sep.failed_clusters.push_back(cl);
        }
        sep.ok = false;
        sep.failures.push_back("balls " + std::to_string(a) + " and " + std::to_string(b) + " intersect");
      }
    }
  }
  return sep;
}

int ball_classify(const std::vector<BallPair>& pairs, const Vec& x) {
  double best = std::numeric_limits<double>::infinity();
  int label = 1;
  for (const auto& b : balls_of(pairs)) {
    const double dist = (x - b.center).norm();
    if (dist < best) {
      best = dist;
      label = b.label;
    }
  }
  return label;
}

ShatterResult robust_shatter_check(const GridDataset& grid, const Separation& sep, const Labeling& labeling,
                                   const Classifier& classifier, int probes_per_ball) {
  if (probes_per_ball < 0) throw std::invalid_argument("robust_shatter_check: probes_per_ball must be >= 0");
  if (labeling.size() != grid.size()) throw std::invalid_argument("robust_shatter_check: labeling length mismatch");
  ShatterResult r;
  if (!sep.ok) return r;
  r.min_margin = std::numeric_limits<double>::infinity();
  auto probe = [&](const Vec& x, int label) {
    const double m = label * classifier(x);
    ++r.probes;
    if (!(m > 0.0)) ++r.failures;
    r.min_margin = std::min(r.min_margin, m);
  };
  for (const auto& b : balls_of(sep.pairs)) {
    if (b.sentinel) continue;
    probe(b.center, b.label);
    for (Eigen::Index k = 0; k < grid.d; ++k) {
      probe(b.center + grid.delta * axis(grid.d, k), b.label);
      probe(b.center - grid.delta * axis(grid.d, k), b.label);
    }
    for (int k = 0; k < probes_per_ball; ++k) {
      probe(numerics::quasi_ball(static_cast<std::uint64_t>(k), b.center, grid.delta), b.label);
    }
  }
  for (std::size_t k = 0; k < grid.size(); ++k) probe(grid.points[k], labeling[k]);
  r.pass = r.failures == 0;
  return r;
}

ShatterResult robust_shatter_check(const GridDataset& grid, const Labeling& labeling, int probes_per_ball) {
  const Separation sep = separating_balls(grid, labeling);
  const auto& pairs = sep.pairs;
  return robust_shatter_check(
      grid, sep, labeling, [&](const Vec& x) { return static_cast<double>(ball_classify(pairs, x)); }, probes_per_ball);
}

attacks::Lift grid_lift(const GridDataset& grid) {
  Vec mean = Vec::Zero(grid.d);
  for (const Vec& p : grid.points) mean += p;
  mean /= static_cast<double>(grid.size());
  double reach = 0.0;
  for (const Vec& p : grid.points) reach = std::max(reach, (p - mean).norm());
  // Ball centers sit within about 1.2 delta of their points; 3 delta covers
  // every probe.
  return {mean, 1.0 / (reach + 3.0 * grid.delta)};
}

namespace {

training::TrainConfig grid_config(const GridDataset& grid, const training::TrainConfig& base) {
  training::TrainConfig cfg = base;
  training::TwoLayerArch arch;
  if (const auto* b = std::get_if<training::TwoLayerArch>(&base.arch)) arch = *b;
  arch.d = grid.d;
  cfg.arch = arch;
  cfg.lift = grid_lift(grid);
  return cfg;
}

Classifier net_classifier(const training::TrainConfig& cfg, const training::TrainRun& run) {
  const auto params = std::get<models::TwoLayerParams>(run.best_params);
  const auto act = std::get<training::TwoLayerArch>(cfg.arch).act;
  const auto lift = *cfg.lift;
  return [params, act, lift](const Vec& x) { return models::forward_two_layer(params, act, lift.apply(x)); };
}

}  // namespace

TrainedShatter trained_net_shatter(const GridDataset& grid, const Labeling& labeling, const training::TrainConfig& base,
                                   int probes_per_ball) {
  TrainedShatter out;
  const Separation sep = separating_balls(grid, labeling);
  if (!sep.ok) return out;
  attacks::Dataset ds;
  ds.delta = grid.delta;
  ds.geometry = attacks::Geometry::euclidean_ball;
  for (const auto& b : balls_of(sep.pairs)) {
    if (!b.sentinel) ds.examples.push_back({b.center, b.label});
  }
  const auto cfg = grid_config(grid, base);
  const auto run = training::train_plain(cfg, ds);
  out.status = run.status;
  out.min_surrogate = run.min_surrogate;
  if (run.status != training::RunStatus::ok) return out;
  out.result = robust_shatter_check(grid, sep, labeling, net_classifier(cfg, run), probes_per_ball);
  return out;
}

TrainedShatter trained_net_interpolate(const GridDataset& grid, const Labeling& labeling,
                                       const training::TrainConfig& base) {
  TrainedShatter out;
  attacks::Dataset ds = grid_as_dataset(grid, labeling);
  ds.delta = 0.0;
  auto cfg = grid_config(grid, base);
  cfg.attack = attacks::AttackSpec{};
  const auto run = training::train_plain(cfg, ds);
  out.status = run.status;
  out.min_surrogate = run.min_surrogate;
  if (run.status != training::RunStatus::ok) return out;
  const auto clf = net_classifier(cfg, run);
  ShatterResult& r = out.result;
  r.min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double m = labeling[k] * clf(grid.points[k]);
    ++r.probes;
    if (!(m > 0.0)) ++r.failures;
    r.min_margin = std::min(r.min_margin, m);
  }
  r.pass = r.failures == 0;
  return out;
}

std::vector<LabelingReport> exhaustive_ball_check(const GridDataset& grid, int probes_per_ball, int workers) {
  const std::uint64_t count = labeling_count(grid);
  std::vector<LabelingReport> rows(count);
  parallel_for(count, workers, [&](std::size_t id) {
    const Labeling l = labeling_from_id(id, grid.size());
    const Separation sep = separating_balls(grid, l);
    LabelingReport& row = rows[id];
    row.id = id;
    row.separated = sep.ok;
    row.min_ball_gap = sep.min_ball_gap;
    const auto& pairs = sep.pairs;
    row.shatter = robust_shatter_check(
        grid, sep, l, [&](const Vec& x) { return static_cast<double>(ball_classify(pairs, x)); }, probes_per_ball);
  });
  return rows;
}

std::vector<GapRow> capacity_gap_probe(const std::vector<int>& n_list, Eigen::Index d,
                                       const std::vector<Eigen::Index>& width_grid, int labelings,
                                       const training::TrainConfig& base, int probes_per_ball, std::uint64_t seed,
                                       double delta) {
  if (width_grid.empty()) throw std::invalid_argument("capacity_gap_probe: empty width grid");
  if (n_list.empty()) throw std::invalid_argument("capacity_gap_probe: empty n list");
  if (labelings < 1) throw std::invalid_argument("capacity_gap_probe: labelings must be >= 1");
  std::vector<Eigen::Index> widths = width_grid;
  std::sort(widths.begin(), widths.end());
  std::vector<GapRow> rows;
  for (int n : n_list) {
    const GridDataset grid = build_grid(n, d, delta, delta / 4.0);
    const std::uint64_t total = labeling_count(grid);
    std::vector<std::uint64_t> ids;
    if (total <= static_cast<std::uint64_t>(labelings)) {
      for (std::uint64_t id = 0; id < total; ++id) ids.push_back(id);
    } else {
      numerics::RngStream rng = numerics::RngStream(seed).fork(static_cast<std::uint64_t>(n));
      std::set<std::uint64_t> picked;
      while (picked.size() < static_cast<std::size_t>(labelings)) picked.insert(rng.below(total));
      ids.assign(picked.begin(), picked.end());
    }
    GapRow row;
    row.n = n;
    for (Eigen::Index m : widths) {
      auto cfg = base;
      training::TwoLayerArch arch;
      if (const auto* b = std::get_if<training::TwoLayerArch>(&base.arch)) arch = *b;
      arch.m = m;
      cfg.arch = arch;
      bool robust_ok = !row.robust_min_width.has_value();
      bool plain_ok = !row.plain_min_width.has_value();
      for (std::uint64_t id : ids) {
        const Labeling l = labeling_from_id(id, grid.size());
        if (robust_ok) robust_ok = trained_net_shatter(grid, l, cfg, probes_per_ball).result.pass;
        if (plain_ok) plain_ok = trained_net_interpolate(grid, l, cfg).result.pass;
        if (!robust_ok && !plain_ok) break;
      }
      if (robust_ok && !row.robust_min_width) row.robust_min_width = m;
      if (plain_ok && !row.plain_min_width) row.plain_min_width = m;
      if (row.robust_min_width && row.plain_min_width) break;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string labeling_csv(const std::vector<LabelingReport>& rows) {
  std::ostringstream out;
  out << "labeling_id,separated,pass,probes,failures,min_margin,min_ball_gap\n";
  for (const auto& r : rows) {
    out << r.id << ',' << (r.separated ? 1 : 0) << ',' << (r.shatter.pass ? 1 : 0) << ',' << r.shatter.probes << ','
        << r.shatter.failures << ',' << fmt(r.shatter.min_margin) << ',' << fmt(r.min_ball_gap) << '\n';
  }
  return out.str();
}

std::string gap_csv(const std::vector<GapRow>& rows) {
  std::ostringstream out;
  out << "n,robust_min_width,plain_min_width\n";
  for (const auto& r : rows) {
    out << r.n << ',' << (r.robust_min_width ? std::to_string(*r.robust_min_width) : "none") << ','
        << (r.plain_min_width ? std::to_string(*r.plain_min_width) : "none") << '\n';
  }
  return out.str();
}

attacks::Dataset grid_as_dataset(const GridDataset& grid, const Labeling& labeling) {
  if (labeling.size() != grid.size()) throw std::invalid_argument("grid_as_dataset: labeling length mismatch");
  attacks::Dataset ds;
  ds.delta = grid.delta;
  ds.geometry = attacks::Geometry::euclidean_ball;
  for (std::size_t k = 0; k < grid.size(); ++k) ds.examples.push_back({grid.points[k], labeling[k]});
  return ds;
}

}  // namespace advlab::capacity
