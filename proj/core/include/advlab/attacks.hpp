#pragma once

#include <cstddef>
#include <filesystem>
#include <string_view>
#include <utility>
#include <vector>

#include "advlab/models.hpp"

namespace advlab::attacks {

using models::LossFn;
using numerics::RngStream;
using numerics::Vec;

// ---------------------------------------------------------------------------
// Perturbation sets
// ---------------------------------------------------------------------------

enum class Geometry {
  sphere_cap,      // {x' : |x' - c| <= delta, |x'| = 1}
  euclidean_ball,  // {x' : |x' - c| <= delta}
};

/// Allowed perturbations of one example. The default geometry is the
/// spherical cap of chordal radius delta around a unit-norm center.
struct PerturbSet {
  Vec center;
  double delta = 0.0;
  Geometry geometry = Geometry::sphere_cap;

  static PerturbSet cap(Vec center, double delta) { return {std::move(center), delta, Geometry::sphere_cap}; }
  static PerturbSet ball(Vec center, double delta) { return {std::move(center), delta, Geometry::euclidean_ball}; }

  bool contains(const Vec& x, double tol = 1e-8) const;
  Vec project(const Vec& x) const;
  /// Random point in the set.
  Vec sample(RngStream& rng) const;
  /// Quasi-random point `index` of a nested low-discrepancy cover of the set.
  Vec quasi_sample(std::uint64_t index) const;
};

using PerturbCap = PerturbSet;

/// Projection onto a cap: Euclidean projection onto the delta-ball followed
/// by renormalization, applied twice. If rounding still leaves the point
/// outside, it is rotated in the plane of (center, x) onto the cap boundary.
Vec project_cap(const PerturbSet& cap, const Vec& x);

/// Largest chordal radius for which a cap equals the whole sphere.
inline constexpr double kWholeSphereDelta = 2.0;

// ---------------------------------------------------------------------------
// Predictors: the input-side view of a model used by attacks
// ---------------------------------------------------------------------------

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual double value(const Vec& x) const = 0;
  /// Returns f(x) and writes df/dx into `grad`.
  virtual double value_and_grad(const Vec& x, Vec& grad) const = 0;
  /// Column-wise value_and_grad: f(i) = f(X.col(i)), G.col(i) its gradient.
  virtual void values_and_grads(const numerics::Mat& X, Vec& f, numerics::Mat& G) const;
};

class DeepPredictor final : public Predictor {
 public:
  explicit DeepPredictor(const models::DeepNetParams& p) : p_(p) {}
  double value(const Vec& x) const override;
  double value_and_grad(const Vec& x, Vec& grad) const override;
  void values_and_grads(const numerics::Mat& X, Vec& f, numerics::Mat& G) const override;

 private:
  const models::DeepNetParams& p_;
};

class TwoLayerPredictor final : public Predictor {
 public:
  TwoLayerPredictor(const models::TwoLayerParams& p, models::Activation act) : p_(p), act_(act) {}
  double value(const Vec& x) const override;
  double value_and_grad(const Vec& x, Vec& grad) const override;
  void values_and_grads(const numerics::Mat& X, Vec& f, numerics::Mat& G) const override;

 private:
  const models::TwoLayerParams& p_;
  models::Activation act_;
};

/// f(x) = v.x + b.
class LinearPredictor final : public Predictor {
 public:
  LinearPredictor(Vec v, double bias = 0.0) : v_(std::move(v)), bias_(bias) {}
  double value(const Vec& x) const override { return v_.dot(x) + bias_; }
  double value_and_grad(const Vec& x, Vec& grad) const override {
    grad = v_;
    return value(x);
  }

 private:
  Vec v_;
  double bias_;
};

/// Embeds R^d into the unit sphere of R^(d+1):
///   lift(x) = [s (x - shift), 1] / |[s (x - shift), 1]|.
/// The map is injective and s-Lipschitz.
struct Lift {
  Vec shift;
  double scale = 1.0;

  Vec apply(const Vec& x) const;
  /// J(x)^T g for the Jacobian J of apply at x.
  Vec pullback(const Vec& x, const Vec& g) const;
};

/// inner(lift(x)); gradients are pulled back through the lift.
class LiftedPredictor final : public Predictor {
 public:
  LiftedPredictor(const Predictor& inner, Lift lift) : inner_(inner), lift_(std::move(lift)) {}
  double value(const Vec& x) const override { return inner_.value(lift_.apply(x)); }
  double value_and_grad(const Vec& x, Vec& grad) const override;

 private:
  const Predictor& inner_;
  Lift lift_;
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Example {
  Vec x;
  int y = 1;
};

/// Labeled points sharing one perturbation radius.
struct Dataset {
  std::vector<Example> examples;
  double delta = 0.0;
  Geometry geometry = Geometry::sphere_cap;

  std::size_t size() const { return examples.size(); }
  Eigen::Index dim() const { return examples.empty() ? 0 : examples.front().x.size(); }
  PerturbSet set_of(std::size_t i) const { return {examples[i].x, delta, geometry}; }
};

struct CompatibilityReport {
  bool compatible = true;
  std::vector<std::pair<std::size_t, std::size_t>> violations;
};

/// Compatible iff every differently-labeled pair is more than 2 delta apart,
/// i.e. the closed perturbation sets are disjoint.
CompatibilityReport check_compatible(const Dataset& ds);

/// Random unit-sphere points with alternating labels; a candidate is rejected
/// when it lies within 2 delta + gap of an oppositely-labeled point.
Dataset make_toy_dataset(RngStream& rng, std::size_t n, Eigen::Index d, double delta, double gap = 0.05);

/// JSON lines: a header {"d": ..., "delta": ...} followed by one
/// {"x": [...], "y": +-1} record per example.
void write_dataset_jsonl(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset_jsonl(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Perturbation functions
// ---------------------------------------------------------------------------

enum class AttackKind { identity, random, fgsm, pgd };

std::string_view attack_kind_name(AttackKind k);
AttackKind parse_attack_kind(std::string_view name);

/// A perturbation function. pgd takes `steps` normalized l2 ascent steps
/// (size step_size * step_decay^k at step k), projects after each, and
/// returns the best iterate over `restarts` runs; restart 0 starts at the
/// center, the others at random points of the set. fgsm takes one projected
/// step of size step_size (or delta when step_size <= 0).
struct AttackSpec {
  AttackKind kind = AttackKind::identity;
  int steps = 1;
  double step_size = 0.0;
  int restarts = 1;
  double step_decay = 1.0;
  RngStream rng;

  void validate() const;
};

struct AttackResult {
  Vec point;
  double f = 0.0;
  double loss = 0.0;
};

/// Applies the perturbation function to one example. `rng` supplies the
/// example's randomness (callers fork it per example).
AttackResult attack(const AttackSpec& spec, const Predictor& model, const LossFn& loss, const PerturbSet& set, int y,
                    RngStream rng);

/// attack() on many examples at once; every pgd step evaluates all columns
/// with one values_and_grads call. Column i uses sets[i], y[i] and rngs[i]
/// as attack() would; results agree with attack() up to rounding, and are
/// bit-identical for identical batches.
std::vector<AttackResult> attack_batch(const AttackSpec& spec, const Predictor& model, const LossFn& loss,
                                       const std::vector<PerturbSet>& sets, const std::vector<int>& y,
                                       const std::vector<RngStream>& rngs);

/// Mean loss at the clean points.
double plain_loss(const Predictor& model, const Dataset& ds, const LossFn& loss);

/// (1/n) sum_i loss(f(A(x_i)), y_i); example i uses spec.rng.fork(i).
double surrogate_loss(const AttackSpec& spec, const Predictor& model, const Dataset& ds, const LossFn& loss,
                      int workers = 1);

struct RobustLossReport {
  double loss = 0.0;
  std::vector<double> per_example;
  std::vector<Vec> worst_points;
};

/// One-sided estimate of the robust loss: for every example, the max of the
/// loss over pgd (budget restarts x 50 steps) and budget*100 quasi-random
/// points of the set. Nondecreasing in budget for a fixed rng. Outputs of
/// the `include` attacks (run exactly as surrogate_loss runs them) join the
/// candidate set, so the estimate dominates their surrogate losses.
RobustLossReport robust_loss_report(const Predictor& model, const Dataset& ds, const LossFn& loss, int budget,
                                    const RngStream& rng, int workers = 1,
                                    const std::vector<AttackSpec>& include = {});
double robust_loss_oracle(const Predictor& model, const Dataset& ds, const LossFn& loss, int budget,
                          const RngStream& rng, int workers = 1, const std::vector<AttackSpec>& include = {});

}  // namespace advlab::attacks
