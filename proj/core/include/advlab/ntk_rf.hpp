#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/models.hpp"

namespace advlab::ntk_rf {

using models::Activation;
using models::InitLaw;
using numerics::Mat;
using numerics::RngStream;
using numerics::Vec;

/// Two-layer NTK K(x, y) = E_w <x s'(w.x), y s'(w.y)> for w drawn from
/// `init_law` (N(0, I_d) or uniform on the sphere of radius sqrt(d)).
struct KernelSpec {
  Activation activation{models::ActivationKind::relu};
  InitLaw init_law = InitLaw::gaussian_identity;
  std::size_t mc_samples = 100000;
  /// Use the closed form when one exists (relu, quad_relu).
  bool closed_form = true;

  void validate() const;
  bool has_closed_form() const;
};

struct KernelEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo mean and standard error over spec.mc_samples draws. Samples
/// come in fixed-size chunks, chunk k from rng.fork(k), so the result does
/// not depend on `workers`.
KernelEstimate ntk_mc(const KernelSpec& spec, const RngStream& rng, const Vec& x, const Vec& y, int workers = 1);

/// <x, y> (pi - theta) / (2 pi) for unit x, y at angle theta. The same for
/// both init laws since s' depends only on the direction of w.
double relu_ntk(const Vec& x, const Vec& y);
/// (2 / pi) <x, y> (sin theta + (pi - theta) cos theta) for unit x, y. Both
/// init laws agree because E|w|^2 = d under each.
double quad_relu_ntk(const Vec& x, const Vec& y);

/// `count` directions from the init law in R^d, one per row.
Mat draw_directions(InitLaw law, RngStream& rng, Eigen::Index count, Eigen::Index d);

/// A kernel ready for evaluation. Without a closed form it is the empirical
/// kernel over mc_samples directions drawn once, so every Gram matrix it
/// builds is positive semidefinite.
class Kernel {
 public:
  Kernel() = default;
  Kernel(KernelSpec spec, Eigen::Index d, const RngStream& rng);

  const KernelSpec& spec() const { return spec_; }
  Eigen::Index dim() const { return dim_; }
  bool exact() const { return mc_dirs_.size() == 0; }
  const Mat& mc_directions() const { return mc_dirs_; }
  static Kernel from_directions(KernelSpec spec, Mat directions);

  double operator()(const Vec& x, const Vec& y) const;
  /// K(xs[i], ys[j]).
  Mat gram(const std::vector<Vec>& xs, const std::vector<Vec>& ys, int workers = 1) const;

 private:
  KernelSpec spec_;
  Eigen::Index dim_ = 0;
  Mat mc_dirs_;
};

/// Maps a unit x in R^d to [x, 1] / sqrt(2) on the sphere of R^(d+1).
Vec hemisphere_lift(const Vec& x);

struct FitOptions {
  int cap_samples_per_point = 0;
  /// Every anchor of example i gets target target_scale * y_i.
  double target_scale = 1.0;
  double lambda = 1e-6;
  bool hemisphere_lift = false;
  int workers = 1;
};

/// g(x) = sum_t a_t K(x, x_t), fitted by ridge regression on anchors.
struct KernelFit {
  Kernel kernel;
  std::vector<Vec> anchors;  // in kernel space (lifted when `lifted`)
  Vec targets;
  Vec coeffs;
  double lambda = 0.0;
  bool lifted = false;
  double max_residual = 0.0;

  /// Kernel-space image of a data point.
  Vec transform(const Vec& x) const { return lifted ? hemisphere_lift(x) : x; }
  /// g at a data point.
  double predict(const Vec& x) const;
  /// g at a kernel-space point.
  double predict_kernel_space(const Vec& z) const;
  /// C * sum_t |a_t| with C = sup |s'| on directions of norm <= reach; an
  /// upper bound on the RF-norm of g.
  double rf_norm_bound(double reach) const;
};

/// Solves (G + lambda I) a = targets. With lambda == 0 an ill-conditioned or
/// singular Gram matrix is rejected with advice to set lambda > 0.
KernelFit kernel_fit_anchors(const Kernel& kernel, std::vector<Vec> anchors, Vec targets, double lambda,
                             bool lifted = false, int workers = 1);
/// Anchors are the dataset points plus cap_samples_per_point random points of
/// each cap (example i samples from rng.fork(1).fork(i)); the MC kernel, when
/// needed, draws its directions from rng.fork(0).
KernelFit kernel_fit(const KernelSpec& spec, const attacks::Dataset& ds, const FitOptions& opts, const RngStream& rng);

/// Finite random-feature model h-hat(x) = sum_r c_r^T x s'(w_r . x).
struct RfModel {
  Mat directions;  // M x d
  Mat coeffs;      // M x d
  Activation activation;
  /// Bound on every |c_r|: (rf_norm_bound of the fit) / M.
  double coeff_bound = 0.0;

  Eigen::Index size() const { return directions.rows(); }
  double eval(const Vec& z) const;
};

/// c_r = (1/M) sum_t a_t x_t s'(w_r . x_t) on the given directions; the
/// init-law densities cancel for both laws.
RfModel rf_from_directions(const KernelFit& fit, Mat directions);
/// Draws M directions from the fit's init law, then rf_from_directions.
RfModel rf_construct(const KernelFit& fit, RngStream& rng, Eigen::Index M);

/// Sup of |g - h-hat| over the unit sphere of the data space, estimated from
/// quasi-random probes followed by local ascent. Ascent starts from the worst
/// probe among the first N, N/2, N/4, ... probes, so the estimate never
/// decreases when probe_count doubles.
double rf_sup_error(const RfModel& model, const KernelFit& fit, std::size_t probe_count, int workers = 1);

struct Embedding {
  models::TwoLayerParams params;
  /// |W* - W0|_F = sqrt(m/2) sqrt(sum_r |c_r|^2).
  double distance = 0.0;
};

/// W* from W0 by w_r += a_r sqrt(m/4) c_r and wbar_r -= a_r sqrt(m/4) c_r.
/// Including the output sign a_r makes the linearization at W0 equal h-hat.
/// Requires the model directions to be the net's initial rows and m/2 == M.
Embedding embed_rf_into_net(const RfModel& model, const models::TwoLayerParams& params0);

/// f(W0, x) + <grad_W f(W0, x), W - W0>.
double linearized_output(const models::TwoLayerParams& params0, const models::TwoLayerParams& params,
                         const Activation& act, const Vec& x);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void write_gram_csv(const std::filesystem::path& path, const Mat& gram);
void save(const std::filesystem::path& stem, const KernelFit& fit);
void save(const std::filesystem::path& stem, const RfModel& model);
KernelFit load_kernel_fit(const std::filesystem::path& stem);
RfModel load_rf_model(const std::filesystem::path& stem);

}  // namespace advlab::ntk_rf
