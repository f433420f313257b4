#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/training.hpp"

namespace advlab::capacity {

using numerics::Vec;

/// floor(n/2) clusters c_i = (6 i delta, 0, ..., 0), i = 1..floor(n/2), each
/// holding the d points x_{i,j} = c_i + epsilon e_j. Points live in R^d, not
/// on the sphere.
struct GridDataset {
  Eigen::Index d = 0;
  double delta = 0.0;
  double epsilon = 0.0;
  std::vector<Vec> centers;
  std::vector<Vec> points;  // cluster-major: index i * d + j

  std::size_t clusters() const { return centers.size(); }
  std::size_t size() const { return points.size(); }
  const Vec& point(std::size_t i, Eigen::Index j) const { return points[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)]; }
};

/// Rejects n < 2, d < 1, epsilon outside (0, delta], and any pair of points
/// from different clusters within 2 delta of each other.
GridDataset build_grid(int n, Eigen::Index d, double delta, double epsilon);

/// Labels of all points, +-1, cluster-major.
using Labeling = std::vector<int>;

/// Labeling number `id` of N points: point 0 is the most significant bit and
/// a set bit means -1, so ids enumerate all 2^N labelings in lexicographic
/// order.
Labeling labeling_from_id(std::uint64_t id, std::size_t points);
std::uint64_t labeling_count(const GridDataset& grid);

struct BallPair {
  Vec pos_center;
  Vec neg_center;
  double radius = 0.0;
  /// (y_{i,1}, ..., y_{i,d}); the hyperplane M_i is normal . (x - c_i) = 0.
  Vec normal;
  bool pos_sentinel = false;  // the cluster has no positive point
  bool neg_sentinel = false;
};

struct Separation {
  std::vector<BallPair> pairs;
  bool ok = true;
  std::vector<std::size_t> failed_clusters;
  std::vector<std::string> failures;
  /// Smallest gap |center_a - center_b| - 2 delta over all ball pairs.
  double min_ball_gap = 0.0;
};

/// Per cluster, a positive and a negative ball of radius delta. One-sided
/// clusters use the centroid of their points and a far sentinel ball. Mixed
/// clusters place each ball on its own side of M_i: the center is the
/// in-plane centroid of that side's points pushed along the unit normal just
/// past delta, far enough to clear M_i and near enough to keep every point
/// of that side inside. All properties are then verified directly.
Separation separating_balls(const GridDataset& grid, const Labeling& labeling);

/// +1 or -1: the label of the nearest ball center.
int ball_classify(const std::vector<BallPair>& pairs, const Vec& x);

/// Score whose sign is the predicted label.
using Classifier = std::function<double(const Vec&)>;

struct ShatterResult {
  bool pass = false;
  std::size_t probes = 0;
  std::size_t failures = 0;
  /// min over probes of label * score.
  double min_margin = 0.0;
};

/// Probes every ball that holds data (its center, the 2d axis extremes at
/// distance delta and probes_per_ball quasi-random points) and every data
/// point; passes when the classifier's sign equals the ball's label at all of
/// them.
ShatterResult robust_shatter_check(const GridDataset& grid, const Separation& sep, const Labeling& labeling,
                                   const Classifier& classifier, int probes_per_ball);
/// Same with the nearest-ball classifier.
ShatterResult robust_shatter_check(const GridDataset& grid, const Labeling& labeling, int probes_per_ball);

/// Lift onto the sphere suited to a grid: shift to the point mean, scale so
/// every point of every ball maps from within the unit ball.
attacks::Lift grid_lift(const GridDataset& grid);

/// Adversarial training of a two-layer net on the data-holding ball centers
/// with attacks inside radius-delta Euclidean balls (through the lift).
/// `base` supplies alpha, T, attack, seed and the two-layer arch; its input
/// dimension and lift are set from the grid.
struct TrainedShatter {
  ShatterResult result;
  training::RunStatus status = training::RunStatus::ok;
  double min_surrogate = 0.0;
};
TrainedShatter trained_net_shatter(const GridDataset& grid, const Labeling& labeling, const training::TrainConfig& base,
                                   int probes_per_ball);
/// Plain interpolation: identity-attack training on the points themselves,
/// checked only at the points.
TrainedShatter trained_net_interpolate(const GridDataset& grid, const Labeling& labeling,
                                       const training::TrainConfig& base);

struct LabelingReport {
  std::uint64_t id = 0;
  bool separated = false;
  ShatterResult shatter;
  double min_ball_gap = 0.0;
};

/// Ball-classifier check of every labeling, reduced in id order.
std::vector<LabelingReport> exhaustive_ball_check(const GridDataset& grid, int probes_per_ball, int workers = 1);

struct GapRow {
  int n = 0;
  std::optional<Eigen::Index> robust_min_width;
  std::optional<Eigen::Index> plain_min_width;
};

/// For each n, the smallest width in width_grid at which trained nets pass on
/// all sampled labelings, robustly and plainly.
std::vector<GapRow> capacity_gap_probe(const std::vector<int>& n_list, Eigen::Index d,
                                       const std::vector<Eigen::Index>& width_grid, int labelings,
                                       const training::TrainConfig& base, int probes_per_ball, std::uint64_t seed,
                                       double delta = 0.05);

/// CSV: labeling_id, separated, pass, probes, failures, min_margin, min_ball_gap.
std::string labeling_csv(const std::vector<LabelingReport>& rows);
std::string gap_csv(const std::vector<GapRow>& rows);

/// The grid in the attacks dataset format (Euclidean-ball geometry).
attacks::Dataset grid_as_dataset(const GridDataset& grid, const Labeling& labeling);

}  // namespace advlab::capacity
