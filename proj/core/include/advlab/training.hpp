#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/models.hpp"

namespace advlab::training {

using attacks::AttackSpec;
using attacks::Dataset;
using models::DeepNetParams;
using models::TwoLayerParams;
using numerics::Mat;
using numerics::RngStream;
using numerics::Vec;

struct DeepArch {
  Eigen::Index m = 256;
  Eigen::Index d = 10;
  int H = 1;
  models::InputLayer input_layer = models::InputLayer::relu;
};

struct TwoLayerArch {
  Eigen::Index m = 256;
  Eigen::Index d = 10;
  models::Activation act{models::ActivationKind::softplus};
  models::InitLaw law = models::InitLaw::gaussian_identity;
};

using Arch = std::variant<DeepArch, TwoLayerArch>;
using Params = std::variant<DeepNetParams, TwoLayerParams>;

/// Full-batch adversarial training setup.
///
/// R follows each architecture's own convention: the deep ball is
/// |W^(h) - W0^(h)|_F <= R / sqrt(m) per layer, the two-layer threshold is
/// |W - W0|_F <= R over both blocks (only logged, never enforced).
struct TrainConfig {
  double alpha = 1e-3;
  int T = 100;
  double R = 1.0;
  AttackSpec attack;
  std::uint64_t seed = 0;
  Arch arch = DeepArch{};
  /// Deep nets only; false runs plain gradient descent.
  bool project = true;
  int workers = 1;
  /// Data live in R^d and are mapped onto the sphere of R^(d+1) before the
  /// net sees them. Attacks act on the raw data.
  std::optional<attacks::Lift> lift;
  double divergence_limit = 1e6;

  void validate() const;
  Eigen::Index model_dim() const;
};

struct StepRecord {
  int t = 0;
  double surrogate = 0.0;  // L_A(W_t)
  double plain = 0.0;      // L(W_t)
  /// Deep: |W^(h)_t - W^(h)_0|_F per layer. Two-layer: one entry, |W_t - W_0|_F.
  std::vector<double> excursion;
  bool proj_active = false;
  bool exceeds_3r = false;  // two-layer only
};

enum class RunStatus { ok, diverged };

struct TrainRun {
  /// t = 1..T; shorter only when the run diverged (the last row is the
  /// offending step).
  std::vector<StepRecord> records;
  RunStatus status = RunStatus::ok;
  std::string message;
  Params init;
  Params final_params;
  /// Iterate attaining the minimum logged surrogate loss.
  Params best_params;
  double min_surrogate = 0.0;
  int argmin = 0;
};

/// Radial projection of every trainable layer onto |W^(h) - W0^(h)|_F <= R/sqrt(m).
/// A and a are copied from `params` untouched. Returns whether any layer moved.
bool project_ball_inplace(DeepNetParams& params, const DeepNetParams& init, double R);
DeepNetParams project_ball(const DeepNetParams& params, const DeepNetParams& init, double R);

/// Projected gradient descent on the surrogate loss of a deep net. The attack
/// is re-run at every W_t; its output is held fixed when differentiating.
TrainRun train_projected(const TrainConfig& cfg, const Dataset& ds);
/// Gradient descent without projection for the two-layer net.
TrainRun train_plain(const TrainConfig& cfg, const Dataset& ds);
/// Dispatches on the architecture (deep honours cfg.project).
TrainRun train(const TrainConfig& cfg, const Dataset& ds);

/// Initial parameters a run with this config starts from.
Params initial_params(const TrainConfig& cfg);

/// The attack stream example i uses at every step. The stream does not depend
/// on t, so the perturbation is a function of (W, x) alone.
RngStream attack_stream(std::uint64_t seed);

/// Model input for a raw data point (applies the lift when configured).
Vec model_input(const TrainConfig& cfg, const Vec& x);

// ---------------------------------------------------------------------------
// Local linearity
// ---------------------------------------------------------------------------

/// |f(W2, x) - f(W1, x) - <grad_W f(W1, x), W2 - W1>|.
double near_linearity_residual(const TwoLayerParams& w1, const TwoLayerParams& w2, const models::Activation& act,
                               const Vec& x);
double near_linearity_residual(const DeepNetParams& w1, const DeepNetParams& w2, const Vec& x);

/// Per-layer Gaussian displacement with |Delta^(h)|_F = radius exactly.
DeepNetParams displace_deep(const DeepNetParams& p, RngStream& rng, double radius);
/// Gaussian displacement of both blocks with total Frobenius norm `radius`.
TwoLayerParams displace_two_layer(const TwoLayerParams& p, RngStream& rng, double radius);

// ---------------------------------------------------------------------------
// Diagnostics at initialization
// ---------------------------------------------------------------------------

struct LemmaReport {
  Eigen::Index m = 0;
  int H = 0;
  int trials = 0;
  double output_norm_ratio = 0.0;  // |a| / sqrt(m)
  double hidden_norm_rate = 0.0;   // fraction of (h, x) with |x^(h)| in [2/3, 4/3]
  double hidden_norm_min = 0.0;
  double hidden_norm_max = 0.0;
  /// max over (h, x) of |a^T D^(H) W^(H) ... D^(h) W^(h)|_2 / sqrt(mH)
  double backward_ratio_max = 0.0;
  double backward_ratio_min = 0.0;
  /// max over (h, x) of |df/dW^(h)|_F / sqrt(mH)
  double layer_grad_ratio_max = 0.0;
  double layer_grad_ratio_min = 0.0;

  bool output_norm_ok() const { return output_norm_ratio >= 0.9 && output_norm_ratio <= 1.1; }
  bool hidden_norm_ok() const { return hidden_norm_rate >= 0.99; }
  bool backward_ok() const { return backward_ratio_min >= 0.05 && backward_ratio_max <= 5.0; }
  bool layer_grad_ok() const { return layer_grad_ratio_min >= 0.05 && layer_grad_ratio_max <= 5.0; }
  bool ok() const { return output_norm_ok() && hidden_norm_ok() && backward_ok() && layer_grad_ok(); }
};

/// Statistics of a fresh deep init over `trials` uniform sphere inputs.
LemmaReport lemma_diagnostics(const DeepNetParams& init, int trials, RngStream& rng, int workers = 1);

// ---------------------------------------------------------------------------
// Finite-difference gradient checks
// ---------------------------------------------------------------------------

struct GradCheckCase {
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  int skipped_kinks = 0;
  double max_rel_error = 0.0;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// `cases` random (init, x, direction) triples. The directional derivative
/// along a random per-layer direction is compared with a central difference;
/// triples whose activation pattern changes inside the stencil are redrawn.
GradCheckReport gradcheck_deep(Eigen::Index m, Eigen::Index d, int H, int cases, RngStream& rng, double h = 1e-6);
/// `cases` random (init, x) pairs; every weight coordinate is checked on each.
GradCheckReport gradcheck_two_layer(Eigen::Index m, Eigen::Index d, const models::Activation& act, int cases,
                                    RngStream& rng, double h = 1e-5);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// One row per step: t, L_A, L_plain, excursion_1..excursion_k, proj_active
/// (two-layer runs add exceeds_3R). Doubles are printed with 17 significant
/// digits so equal runs give equal bytes.
void write_train_csv(const std::filesystem::path& path, const TrainRun& run);
std::string train_csv(const TrainRun& run);
/// Summary JSON text: argmin step, min loss, final losses, status, config echo.
std::string train_summary_json(const TrainConfig& cfg, const TrainRun& run);

std::string_view run_status_name(RunStatus s);

}  // namespace advlab::training
