#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advlab/numerics.hpp"

namespace advlab::models {

using numerics::Mat;
using numerics::RngStream;
using numerics::Vec;

// ---------------------------------------------------------------------------
// Activations and loss
// ---------------------------------------------------------------------------

enum class ActivationKind { relu, softplus, quad_relu };

/// Pointwise activation with its derivative.
///
/// relu uses the indicator 1(z >= 0) as derivative. softplus has |s'| <= 1
/// and a 1/4-Lipschitz derivative, so C = 1 covers both smoothness
/// conditions. quad_relu is max(z, 0)^2 with derivative 2 max(z, 0), which is
/// 2-Lipschitz but unbounded.
struct Activation {
  ActivationKind kind = ActivationKind::softplus;

  double value(double z) const;
  double derivative(double z) const;
  double second_derivative(double z) const;

  /// Lipschitz constant of the derivative, when it exists.
  std::optional<double> derivative_lipschitz() const;
  /// sup |derivative(z)| over |z| <= reach.
  double derivative_bound(double reach) const;
  bool smooth() const { return kind != ActivationKind::relu; }

  std::string_view name() const;
  static Activation parse(std::string_view name);
};

/// Logistic margin loss log(1 + exp(-y f)) for labels y in {+1, -1}.
/// Convex in f, |dl/df| <= 1, dl/df is 1/4-Lipschitz.
struct LossFn {
  double value(double f, int y) const;
  double derivative(double f, int y) const;
};

double loss(const LossFn& l, double f, int y);
double loss_grad(const LossFn& l, double f, int y);

// ---------------------------------------------------------------------------
// Deep ReLU network
// ---------------------------------------------------------------------------

/// How x^(0) is formed from the input. `relu` gives x^(0) = relu(A x), the
/// layout under which hidden norms concentrate near 1 at N(0, 2/m) init;
/// `linear` gives x^(0) = A x, whose norm concentrates near sqrt(2).
enum class InputLayer { relu, linear };

/// Scalar-output deep ReLU net f(W, x) = a^T x^(H) with
/// x^(h) = relu(W^(h) x^(h-1)). A (m x d) and a (length m) are frozen after
/// init; only the square layers W^(1..H) are trained. There is no explicit
/// 1/sqrt(m) output factor: the scale lives in the N(0, 2/m) init.
struct DeepNetParams {
  Mat input;                // A, m x d
  std::vector<Mat> layers;  // W^(1..H), each m x m
  Vec output;               // a, length m
  InputLayer input_layer = InputLayer::relu;

  Eigen::Index width() const { return input.rows(); }
  Eigen::Index input_dim() const { return input.cols(); }
  int depth() const { return static_cast<int>(layers.size()); }
};

/// A, W^(h) ~ N(0, 2/m) entrywise; a ~ N(0, 1).
DeepNetParams init_deep(RngStream& rng, Eigen::Index m, Eigen::Index d, int H,
                        InputLayer input_layer = InputLayer::relu);

struct DeepForward {
  Vec input_pre;                    // A x
  std::vector<Vec> pre;             // x-bar^(h), h = 1..H (index h-1)
  std::vector<Vec> post;            // x^(h), h = 0..H
  double f = 0.0;

  /// Activation pattern of layer h (1-based): 1 where x-bar^(h) >= 0.
  Vec pattern(int h) const;
};

DeepForward forward_deep(const DeepNetParams& p, const Vec& x);

/// Backward vectors b^(h) = D^(h) W^(h+1)^T ... D^(H) a for h = 1..H
/// (index h-1). The layer-h gradient is the rank-one b^(h) x^(h-1)^T.
std::vector<Vec> backprop_deep(const DeepNetParams& p, const DeepForward& fw);

/// df/dW^(h) for every trainable layer.
std::vector<Mat> grad_deep(const DeepNetParams& p, const Vec& x);
std::vector<Mat> grad_deep(const DeepNetParams& p, const DeepForward& fw);

/// df/dx, used by attacks.
Vec input_grad_deep(const DeepNetParams& p, const DeepForward& fw);

// ---------------------------------------------------------------------------
// Two-layer symmetric network
// ---------------------------------------------------------------------------

enum class InitLaw { gaussian_identity, sphere_sqrt_d };

std::string_view init_law_name(InitLaw law);
InitLaw parse_init_law(std::string_view name);

/// f(W, x) = (1/sqrt(m)) (sum_r a_r s(w_r.x) + sum_r a'_r s(wbar_r.x)) with
/// a'_r = -a_r. Rows of `w` and `wbar` are the m/2 paired neurons; `signs`
/// holds a_r. Unlike the deep net, the 1/sqrt(m) factor is explicit.
struct TwoLayerParams {
  Mat w;       // m/2 x d
  Mat wbar;    // m/2 x d
  Vec signs;   // a_r in {+1, -1}, length m/2
  InitLaw law = InitLaw::gaussian_identity;

  Eigen::Index width() const { return 2 * w.rows(); }
  Eigen::Index pairs() const { return w.rows(); }
  Eigen::Index input_dim() const { return w.cols(); }
};

/// Paired init: wbar_r = w_r, output signs opposite, so f(W0, .) == 0.
TwoLayerParams init_two_layer(RngStream& rng, Eigen::Index m, Eigen::Index d, InitLaw law);

double forward_two_layer(const TwoLayerParams& p, const Activation& act, const Vec& x);

/// Gradient with the same shape as the parameters.
struct TwoLayerGrad {
  Mat w;
  Mat wbar;
};

TwoLayerGrad grad_two_layer(const TwoLayerParams& p, const Activation& act, const Vec& x);
Vec input_grad_two_layer(const TwoLayerParams& p, const Activation& act, const Vec& x);

/// Frobenius distance over both weight blocks.
double distance_fro(const TwoLayerParams& a, const TwoLayerParams& b);
/// <G, P - Q> over both blocks.
double inner_displacement(const TwoLayerGrad& g, const TwoLayerParams& p, const TwoLayerParams& q);

double distance_fro(const std::vector<Mat>& a, const std::vector<Mat>& b);

}  // namespace advlab::models
