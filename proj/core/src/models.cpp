#include "advlab/models.hpp"

#include <cmath>
#include <stdexcept>

namespace advlab::models {
namespace {

double sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void require_label(int y) {
  if (y != 1 && y != -1) throw std::invalid_argument("label must be +1 or -1");
}

void require_unit(const Vec& x, Eigen::Index d) {
  if (x.size() != d) throw std::invalid_argument("input dimension mismatch");
  if (std::abs(x.norm() - 1.0) > 1e-8) throw std::invalid_argument("input must lie on the unit sphere");
}

}  // namespace

double Activation::value(double z) const {
  switch (kind) {
    case ActivationKind::relu:
      return z > 0.0 ? z : 0.0;
    case ActivationKind::softplus:
      return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    case ActivationKind::quad_relu:
      return z > 0.0 ? z * z : 0.0;
  }
  return 0.0;
}

double Activation::derivative(double z) const {
  switch (kind) {
    case ActivationKind::relu:
      return z >= 0.0 ? 1.0 : 0.0;
    case ActivationKind::softplus:
      return sigmoid(z);
    case ActivationKind::quad_relu:
      return z > 0.0 ? 2.0 * z : 0.0;
  }
  return 0.0;
}

double Activation::second_derivative(double z) const {
  switch (kind) {
    case ActivationKind::relu:
      return 0.0;
    case ActivationKind::softplus: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
    case ActivationKind::quad_relu:
      return z > 0.0 ? 2.0 : 0.0;
  }
  return 0.0;
}

std::optional<double> Activation::derivative_lipschitz() const {
  switch (kind) {
    case ActivationKind::relu:
      return std::nullopt;
    case ActivationKind::softplus:
      return 1.0;
    case ActivationKind::quad_relu:
      return 2.0;
  }
  return std::nullopt;
}

double Activation::derivative_bound(double reach) const {
  switch (kind) {
    case ActivationKind::relu:
    case ActivationKind::softplus:
      return 1.0;
    case ActivationKind::quad_relu:
      return 2.0 * std::abs(reach);
  }
  return 0.0;
}

std::string_view Activation::name() const {
  switch (kind) {
    case ActivationKind::relu:
      return "relu";
    case ActivationKind::softplus:
      return "softplus";
    case ActivationKind::quad_relu:
      return "quad_relu";
  }
  return "?";
}

Activation Activation::parse(std::string_view name) {
  if (name == "relu") return {ActivationKind::relu};
  if (name == "softplus") return {ActivationKind::softplus};
  if (name == "quad_relu") return {ActivationKind::quad_relu};
  throw std::invalid_argument("unknown activation: " + std::string(name));
}

double LossFn::value(double f, int y) const {
  require_label(y);
  const double z = -static_cast<double>(y) * f;
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double LossFn::derivative(double f, int y) const {
  require_label(y);
  // -y / (1 + exp(y f)) = -y * sigmoid(-y f)
  return -static_cast<double>(y) * sigmoid(-static_cast<double>(y) * f);
}

double loss(const LossFn& l, double f, int y) { return l.value(f, y); }
double loss_grad(const LossFn& l, double f, int y) { return l.derivative(f, y); }

// ---------------------------------------------------------------------------

DeepNetParams init_deep(RngStream& rng, Eigen::Index m, Eigen::Index d, int H, InputLayer input_layer) {
  if (d < 1) throw std::invalid_argument("init_deep: d must be >= 1");
  if (m < d) throw std::invalid_argument("init_deep: width m must be >= input dimension d");
  if (H < 1) throw std::invalid_argument("init_deep: depth H must be >= 1");
  const double var = 2.0 / static_cast<double>(m);
  DeepNetParams p;
  p.input_layer = input_layer;
  RngStream a_stream = rng.fork(0);
  p.input = numerics::gaussian_mat(a_stream, m, d, var);
  p.layers.reserve(static_cast<std::size_t>(H));
  for (int h = 1; h <= H; ++h) {
    RngStream s = rng.fork(static_cast<std::uint64_t>(h));
    p.layers.push_back(numerics::gaussian_mat(s, m, m, var));
  }
  RngStream out_stream = rng.fork(static_cast<std::uint64_t>(H) + 1);
  p.output = numerics::gaussian_vec(out_stream, m, 1.0);
  return p;
}

Vec DeepForward::pattern(int h) const {
  const Vec& z = pre.at(static_cast<std::size_t>(h - 1));
  return (z.array() >= 0.0).cast<double>().matrix();
}

DeepForward forward_deep(const DeepNetParams& p, const Vec& x) {
  require_unit(x, p.input_dim());
  DeepForward fw;
  fw.input_pre = p.input * x;
  fw.post.reserve(p.layers.size() + 1);
  fw.pre.reserve(p.layers.size());
  if (p.input_layer == InputLayer::relu) {
    fw.post.push_back(fw.input_pre.cwiseMax(0.0));
  } else {
    fw.post.push_back(fw.input_pre);
  }
  for (const Mat& w : p.layers) {
    fw.pre.push_back(w * fw.post.back());
    fw.post.push_back(fw.pre.back().cwiseMax(0.0));
  }
  fw.f = p.output.dot(fw.post.back());
  return fw;
}

std::vector<Vec> backprop_deep(const DeepNetParams& p, const DeepForward& fw) {
  const int H = p.depth();
  std::vector<Vec> back(static_cast<std::size_t>(H));
  Vec g = p.output;
  for (int h = H; h >= 1; --h) {
    const Vec& z = fw.pre[static_cast<std::size_t>(h - 1)];
    g = (z.array() >= 0.0).select(g, 0.0);
    back[static_cast<std::size_t>(h - 1)] = g;
    if (h > 1) g = p.layers[static_cast<std::size_t>(h - 1)].transpose() * g;
  }
  return back;
}

std::vector<Mat> grad_deep(const DeepNetParams& p, const DeepForward& fw) {
  const std::vector<Vec> back = backprop_deep(p, fw);
  std::vector<Mat> grads;
  grads.reserve(back.size());
  for (std::size_t h = 0; h < back.size(); ++h) grads.push_back(back[h] * fw.post[h].transpose());
  return grads;
}

std::vector<Mat> grad_deep(const DeepNetParams& p, const Vec& x) { return grad_deep(p, forward_deep(p, x)); }

Vec input_grad_deep(const DeepNetParams& p, const DeepForward& fw) {
  const std::vector<Vec> back = backprop_deep(p, fw);
  Vec g = p.layers.front().transpose() * back.front();  // d f / d x^(0)
  if (p.input_layer == InputLayer::relu) g = (fw.input_pre.array() >= 0.0).select(g, 0.0);
  return p.input.transpose() * g;
}

// ---------------------------------------------------------------------------

std::string_view init_law_name(InitLaw law) {
  return law == InitLaw::gaussian_identity ? "gaussian_identity" : "sphere_sqrt_d";
}

InitLaw parse_init_law(std::string_view name) {
  if (name == "gaussian_identity" || name == "gaussian") return InitLaw::gaussian_identity;
  if (name == "sphere_sqrt_d") return InitLaw::sphere_sqrt_d;
  throw std::invalid_argument("unknown init law: " + std::string(name));
}

TwoLayerParams init_two_layer(RngStream& rng, Eigen::Index m, Eigen::Index d, InitLaw law) {
  if (m < 2 || m % 2 != 0) throw std::invalid_argument("init_two_layer: width m must be even and >= 2");
  if (d < 1) throw std::invalid_argument("init_two_layer: d must be >= 1");
  const Eigen::Index half = m / 2;
  TwoLayerParams p;
  p.law = law;
  p.w.resize(half, d);
  RngStream ws = rng.fork(0);
  for (Eigen::Index r = 0; r < half; ++r) {
    if (law == InitLaw::gaussian_identity) {
      for (Eigen::Index j = 0; j < d; ++j) p.w(r, j) = ws.normal();
    } else {
      p.w.row(r) = numerics::sample_sphere_radius(ws, d, std::sqrt(static_cast<double>(d))).transpose();
    }
  }
  p.wbar = p.w;
  RngStream ss = rng.fork(1);
  p.signs.resize(half);
  for (Eigen::Index r = 0; r < half; ++r) p.signs(r) = static_cast<double>(ss.sign());
  return p;
}

double forward_two_layer(const TwoLayerParams& p, const Activation& act, const Vec& x) {
  const Vec z = numerics::row_dots(p.w, x);
  const Vec zb = numerics::row_dots(p.wbar, x);
  double s = 0.0;
  for (Eigen::Index r = 0; r < z.size(); ++r) s += p.signs(r) * (act.value(z(r)) - act.value(zb(r)));
  return s / std::sqrt(static_cast<double>(p.width()));
}

TwoLayerGrad grad_two_layer(const TwoLayerParams& p, const Activation& act, const Vec& x) {
  const Vec z = numerics::row_dots(p.w, x);
  const Vec zb = numerics::row_dots(p.wbar, x);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.width()));
  Vec cw(z.size()), cb(z.size());
  for (Eigen::Index r = 0; r < z.size(); ++r) {
    cw(r) = scale * p.signs(r) * act.derivative(z(r));
    cb(r) = -scale * p.signs(r) * act.derivative(zb(r));
  }
  return {cw * x.transpose(), cb * x.transpose()};
}

Vec input_grad_two_layer(const TwoLayerParams& p, const Activation& act, const Vec& x) {
  const Vec z = numerics::row_dots(p.w, x);
  const Vec zb = numerics::row_dots(p.wbar, x);
  Vec cw(z.size()), cb(z.size());
  for (Eigen::Index r = 0; r < z.size(); ++r) {
    cw(r) = p.signs(r) * act.derivative(z(r));
    cb(r) = -p.signs(r) * act.derivative(zb(r));
  }
  return (p.w.transpose() * cw + p.wbar.transpose() * cb) / std::sqrt(static_cast<double>(p.width()));
}

double distance_fro(const TwoLayerParams& a, const TwoLayerParams& b) {
  return std::sqrt((a.w - b.w).squaredNorm() + (a.wbar - b.wbar).squaredNorm());
}

double inner_displacement(const TwoLayerGrad& g, const TwoLayerParams& p, const TwoLayerParams& q) {
  return (g.w.array() * (p.w - q.w).array()).sum() + (g.wbar.array() * (p.wbar - q.wbar).array()).sum();
}

double distance_fro(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("distance_fro: layer count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]).squaredNorm();
  return std::sqrt(s);
}

}  // namespace advlab::models
