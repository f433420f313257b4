#include "advlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "advlab/parallel.hpp"

namespace advlab::training {
namespace {

using models::LossFn;

constexpr std::size_t kAttackChunk = 16;

/// Mean loss of a deep net on the columns of X. When `grads` is non-null it
/// receives the gradient of that mean with respect to every trainable layer.
/// The per-example rank-one gradients are summed through GEMMs in column order.
double deep_batch(const DeepNetParams& p, const Mat& X, const std::vector<int>& y, std::vector<Mat>* grads) {
  const LossFn loss;
  const int H = p.depth();
  const auto n = X.cols();
  std::vector<Mat> post(static_cast<std::size_t>(H) + 1);
  std::vector<Mat> pre(static_cast<std::size_t>(H));
  post[0] = p.input * X;
  if (p.input_layer == models::InputLayer::relu) post[0] = post[0].cwiseMax(0.0);
  for (int h = 1; h <= H; ++h) {
    const auto k = static_cast<std::size_t>(h);
    pre[k - 1] = p.layers[k - 1] * post[k - 1];
    post[k] = pre[k - 1].cwiseMax(0.0);
  }
  const Vec f = post.back().transpose() * p.output;
  double total = 0.0;
  Vec c(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    total += loss.value(f(i), y[static_cast<std::size_t>(i)]);
    c(i) = loss.derivative(f(i), y[static_cast<std::size_t>(i)]) / static_cast<double>(n);
  }
  if (grads) {
    grads->assign(static_cast<std::size_t>(H), Mat());
    Mat g = p.output * c.transpose();
    for (int h = H; h >= 1; --h) {
      const auto k = static_cast<std::size_t>(h);
      g = (pre[k - 1].array() >= 0.0).select(g, 0.0);
      (*grads)[k - 1] = g * post[k - 1].transpose();
      if (h > 1) g = p.layers[k - 1].transpose() * g;
    }
  }
  return total / static_cast<double>(n);
}

double two_layer_batch(const TwoLayerParams& p, const models::Activation& act, const Mat& X,
                       const std::vector<int>& y, models::TwoLayerGrad* grad) {
  const LossFn loss;
  const auto n = X.cols();
  const Mat Z = p.w * X;
  const Mat Zb = p.wbar * X;
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.width()));
  double total = 0.0;
  Vec c(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < Z.rows(); ++r) s += p.signs(r) * (act.value(Z(r, i)) - act.value(Zb(r, i)));
    const double f = scale * s;
    total += loss.value(f, y[static_cast<std::size_t>(i)]);
    c(i) = loss.derivative(f, y[static_cast<std::size_t>(i)]) / static_cast<double>(n);
  }
  if (grad) {
    Mat cw(Z.rows(), n), cb(Z.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index r = 0; r < Z.rows(); ++r) {
        cw(r, i) = scale * c(i) * p.signs(r) * act.derivative(Z(r, i));
        cb(r, i) = -scale * c(i) * p.signs(r) * act.derivative(Zb(r, i));
      }
    }
    grad->w = cw * X.transpose();
    grad->wbar = cb * X.transpose();
  }
  return total / static_cast<double>(n);
}

std::vector<double> layer_excursions(const DeepNetParams& p, const DeepNetParams& init) {
  std::vector<double> out;
  for (std::size_t h = 0; h < p.layers.size(); ++h) out.push_back((p.layers[h] - init.layers[h]).norm());
  return out;
}

void require_trainable(const TrainConfig& cfg, const Dataset& ds) {
  cfg.validate();
  if (ds.size() == 0) throw std::invalid_argument("training needs a non-empty dataset");
  const Eigen::Index d = std::visit([](const auto& a) { return a.d; }, cfg.arch);
  if (ds.dim() != d) throw std::invalid_argument("dataset dimension does not match the architecture");
  if (ds.geometry == attacks::Geometry::euclidean_ball && !cfg.lift) {
    throw std::invalid_argument("euclidean-ball datasets need a lift onto the sphere");
  }
  const auto compat = attacks::check_compatible(ds);
  if (!compat.compatible) {
    throw std::invalid_argument("dataset is not compatible: " + std::to_string(compat.violations.size()) +
                                " differently-labeled pairs within 2 delta");
  }
}

/// Shared step loop. `Ops` supplies the architecture-specific pieces.
template <typename P, typename Ops>
TrainRun run_loop(const TrainConfig& cfg, const Dataset& ds, const P& init, Ops& ops) {
  const LossFn loss;
  const auto n = ds.size();
  std::vector<int> y(n);
  Mat clean(cfg.model_dim(), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = ds.examples[i].y;
    clean.col(static_cast<Eigen::Index>(i)) = model_input(cfg, ds.examples[i].x);
  }
  const RngStream stream = attack_stream(cfg.seed);
  AttackSpec spec = cfg.attack;
  spec.rng = stream;

  TrainRun run;
  run.init = init;
  run.min_surrogate = std::numeric_limits<double>::infinity();
  P w = init;
  P best = init;
  bool projected_last = false;
  Mat X(cfg.model_dim(), static_cast<Eigen::Index>(n));
  for (int t = 0; t <= cfg.T; ++t) {
    const auto inner = ops.predictor(w);
    std::unique_ptr<attacks::Predictor> lifted;
    const attacks::Predictor* model = inner.get();
    if (cfg.lift) {
      lifted = std::make_unique<attacks::LiftedPredictor>(*inner, *cfg.lift);
      model = lifted.get();
    }
    // Fixed-size chunks keep the batch layout, and hence the rounding,
    // independent of the worker count.
    const std::size_t chunks = (n + kAttackChunk - 1) / kAttackChunk;
    parallel_for(chunks, cfg.workers, [&](std::size_t c) {
      const std::size_t lo = c * kAttackChunk, hi = std::min(n, lo + kAttackChunk);
      std::vector<attacks::PerturbSet> sets;
      std::vector<int> ys;
      std::vector<RngStream> rngs;
      for (std::size_t i = lo; i < hi; ++i) {
        sets.push_back(ds.set_of(i));
        ys.push_back(y[i]);
        rngs.push_back(stream.fork(i));
      }
      const auto res = attacks::attack_batch(spec, *model, loss, sets, ys, rngs);
      for (std::size_t i = lo; i < hi; ++i) X.col(static_cast<Eigen::Index>(i)) = model_input(cfg, res[i - lo].point);
    });

    typename Ops::Grad grad;
    const double surrogate = ops.batch(w, X, y, t < cfg.T ? &grad : nullptr);
    const bool diverged = !std::isfinite(surrogate) || surrogate > cfg.divergence_limit;
    if (t >= 1 || diverged) {
      StepRecord rec;
      rec.t = t;
      rec.surrogate = surrogate;
      rec.plain = ops.batch(w, clean, y, nullptr);
      rec.excursion = ops.excursion(w, init);
      rec.proj_active = projected_last;
      rec.exceeds_3r = ops.exceeds(rec.excursion, cfg.R);
      run.records.push_back(std::move(rec));
      if (!diverged && surrogate < run.min_surrogate) {
        run.min_surrogate = surrogate;
        run.argmin = t;
        best = w;
      }
    }
    if (diverged) {
      run.status = RunStatus::diverged;
      run.message = "surrogate loss " + std::to_string(surrogate) + " at step " + std::to_string(t);
      break;
    }
    if (t < cfg.T) projected_last = ops.step(w, grad, cfg.alpha);
  }
  if (run.argmin == 0) {
    run.min_surrogate = std::numeric_limits<double>::quiet_NaN();
    best = w;
  }
  run.final_params = std::move(w);
  run.best_params = std::move(best);
  return run;
}

struct DeepOps {
  using Grad = std::vector<Mat>;
  const TrainConfig& cfg;
  const DeepNetParams& init;

  std::unique_ptr<attacks::Predictor> predictor(const DeepNetParams& w) const {
    return std::make_unique<attacks::DeepPredictor>(w);
  }
  double batch(const DeepNetParams& w, const Mat& X, const std::vector<int>& y, Grad* g) const {
    return deep_batch(w, X, y, g);
  }
  std::vector<double> excursion(const DeepNetParams& w, const DeepNetParams& w0) const {
    return layer_excursions(w, w0);
  }
  bool exceeds(const std::vector<double>&, double) const { return false; }
  bool step(DeepNetParams& w, const Grad& g, double alpha) const {
    for (std::size_t h = 0; h < g.size(); ++h) w.layers[h] -= alpha * g[h];
    return cfg.project ? project_ball_inplace(w, init, cfg.R) : false;
  }
};

struct TwoLayerOps {
  using Grad = models::TwoLayerGrad;
  models::Activation act;

  std::unique_ptr<attacks::Predictor> predictor(const TwoLayerParams& w) const {
    return std::make_unique<attacks::TwoLayerPredictor>(w, act);
  }
  double batch(const TwoLayerParams& w, const Mat& X, const std::vector<int>& y, Grad* g) const {
    return two_layer_batch(w, act, X, y, g);
  }
  std::vector<double> excursion(const TwoLayerParams& w, const TwoLayerParams& w0) const {
    return {models::distance_fro(w, w0)};
  }
  bool exceeds(const std::vector<double>& e, double R) const { return e.front() > 3.0 * R; }
  bool step(TwoLayerParams& w, const Grad& g, double alpha) const {
    w.w -= alpha * g.w;
    w.wbar -= alpha * g.wbar;
    return false;
  }
};

}  // namespace

void TrainConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be finite and >= 0");
  if (T < 1) throw std::invalid_argument("T must be >= 1");
  if (!(R > 0.0)) throw std::invalid_argument("R must be > 0");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (!(divergence_limit > 0.0)) throw std::invalid_argument("divergence_limit must be > 0");
  attack.validate();
  if (lift && !(lift->scale > 0.0)) throw std::invalid_argument("lift scale must be > 0");
  if (const auto* a = std::get_if<DeepArch>(&arch)) {
    if (a->d < 1 || a->H < 1 || a->m < model_dim()) throw std::invalid_argument("deep arch needs d >= 1, H >= 1, m >= d");
  } else {
    const auto& b = std::get<TwoLayerArch>(arch);
    if (b.d < 1 || b.m < 2 || b.m % 2 != 0) throw std::invalid_argument("two-layer arch needs d >= 1 and even m >= 2");
  }
}

Eigen::Index TrainConfig::model_dim() const {
  const Eigen::Index d = std::visit([](const auto& a) { return a.d; }, arch);
  return lift ? d + 1 : d;
}

RngStream attack_stream(std::uint64_t seed) { return RngStream(seed).fork(1); }

Vec model_input(const TrainConfig& cfg, const Vec& x) { return cfg.lift ? cfg.lift->apply(x) : x; }

Params initial_params(const TrainConfig& cfg) {
  RngStream rng = RngStream(cfg.seed).fork(0);
  if (const auto* a = std::get_if<DeepArch>(&cfg.arch)) {
    return models::init_deep(rng, a->m, cfg.model_dim(), a->H, a->input_layer);
  }
  const auto& b = std::get<TwoLayerArch>(cfg.arch);
  return models::init_two_layer(rng, b.m, cfg.model_dim(), b.law);
}

bool project_ball_inplace(DeepNetParams& params, const DeepNetParams& init, double R) {
  if (params.layers.size() != init.layers.size()) throw std::invalid_argument("project_ball: depth mismatch");
  const double radius = R / std::sqrt(static_cast<double>(init.width()));
  bool active = false;
  for (std::size_t h = 0; h < params.layers.size(); ++h) {
    Mat& w = params.layers[h];
    const Mat& w0 = init.layers[h];
    if (w.rows() != w0.rows() || w.cols() != w0.cols()) throw std::invalid_argument("project_ball: shape mismatch");
    const double norm = (w - w0).norm();
    if (norm > radius) {
      w = w0 + (radius / norm) * (w - w0);
      active = true;
    }
  }
  return active;
}

DeepNetParams project_ball(const DeepNetParams& params, const DeepNetParams& init, double R) {
  DeepNetParams out = params;
  project_ball_inplace(out, init, R);
  return out;
}

TrainRun train_projected(const TrainConfig& cfg, const Dataset& ds) {
  if (!std::holds_alternative<DeepArch>(cfg.arch)) throw std::invalid_argument("train_projected needs a deep arch");
  require_trainable(cfg, ds);
  const auto init = std::get<DeepNetParams>(initial_params(cfg));
  DeepOps ops{cfg, init};
  return run_loop(cfg, ds, init, ops);
}

TrainRun train_plain(const TrainConfig& cfg, const Dataset& ds) {
  const auto* arch = std::get_if<TwoLayerArch>(&cfg.arch);
  if (!arch) throw std::invalid_argument("train_plain needs a two-layer arch");
  if (!arch->act.smooth()) throw std::invalid_argument("train_plain needs a smooth activation");
  require_trainable(cfg, ds);
  const auto init = std::get<TwoLayerParams>(initial_params(cfg));
  TwoLayerOps ops{arch->act};
  return run_loop(cfg, ds, init, ops);
}

TrainRun train(const TrainConfig& cfg, const Dataset& ds) {
  return std::holds_alternative<DeepArch>(cfg.arch) ? train_projected(cfg, ds) : train_plain(cfg, ds);
}

// ---------------------------------------------------------------------------

double near_linearity_residual(const TwoLayerParams& w1, const TwoLayerParams& w2, const models::Activation& act,
                               const Vec& x) {
  if (w1.w.rows() != w2.w.rows() || w1.w.cols() != w2.w.cols()) {
    throw std::invalid_argument("near_linearity_residual: shape mismatch");
  }
  const double f1 = models::forward_two_layer(w1, act, x);
  const double f2 = models::forward_two_layer(w2, act, x);
  const auto g = models::grad_two_layer(w1, act, x);
  return std::abs(f2 - f1 - models::inner_displacement(g, w2, w1));
}

double near_linearity_residual(const DeepNetParams& w1, const DeepNetParams& w2, const Vec& x) {
  if (w1.layers.size() != w2.layers.size()) throw std::invalid_argument("near_linearity_residual: depth mismatch");
  const auto fw1 = models::forward_deep(w1, x);
  const double f2 = models::forward_deep(w2, x).f;
  const auto back = models::backprop_deep(w1, fw1);
  // <b^(h) x^(h-1)^T, Delta^(h)> = b^(h)^T Delta^(h) x^(h-1)
  double lin = 0.0;
  for (std::size_t h = 0; h < back.size(); ++h) {
    lin += back[h].dot((w2.layers[h] - w1.layers[h]) * fw1.post[h]);
  }
  return std::abs(f2 - fw1.f - lin);
}

DeepNetParams displace_deep(const DeepNetParams& p, RngStream& rng, double radius) {
  DeepNetParams out = p;
  for (auto& w : out.layers) {
    const Mat delta = numerics::gaussian_mat(rng, w.rows(), w.cols(), 1.0);
    w += (radius / delta.norm()) * delta;
  }
  return out;
}

TwoLayerParams displace_two_layer(const TwoLayerParams& p, RngStream& rng, double radius) {
  const Mat dw = numerics::gaussian_mat(rng, p.w.rows(), p.w.cols(), 1.0);
  const Mat db = numerics::gaussian_mat(rng, p.wbar.rows(), p.wbar.cols(), 1.0);
  const double norm = std::sqrt(dw.squaredNorm() + db.squaredNorm());
  TwoLayerParams out = p;
  out.w += (radius / norm) * dw;
  out.wbar += (radius / norm) * db;
  return out;
}

}  // namespace advlab::training
