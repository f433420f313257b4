#include "advlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "advlab/parallel.hpp"

namespace advlab::attacks {
namespace {

/// Unit tangent direction at `c` built from `g` (component orthogonal to c).
/// Falls back to the coordinate axis least aligned with c.
Vec tangent_direction(const Vec& c, const Vec& g) {
  Vec t = g - g.dot(c) * c;
  double n = t.norm();
  if (n > 1e-12) return t / n;
  Eigen::Index k = 0;
  c.cwiseAbs().minCoeff(&k);
  Vec e = Vec::Zero(c.size());
  e(k) = 1.0;
  t = e - e(k) * c(k) * c / c.squaredNorm();
  n = t.norm();
  return n > 0.0 ? Vec(t / n) : e;
}

/// Point at chordal distance r from unit vector c along unit tangent t.
Vec along_sphere(const Vec& c, const Vec& t, double r) {
  const double psi = 2.0 * std::asin(std::min(r, 2.0) / 2.0);
  return std::cos(psi) * c + std::sin(psi) * t;
}

Vec rotate_onto_boundary(const PerturbSet& cap, const Vec& u) {
  return along_sphere(cap.center, tangent_direction(cap.center, u), cap.delta);
}

Vec normalize_or(const Vec& v, const Vec& fallback) {
  const double n = v.norm();
  return n > 1e-300 ? Vec(v / n) : fallback;
}

}  // namespace

bool PerturbSet::contains(const Vec& x, double tol) const {
  if (x.size() != center.size()) return false;
  if ((x - center).norm() > delta + tol) return false;
  if (geometry == Geometry::sphere_cap && std::abs(x.norm() - 1.0) > tol) return false;
  return true;
}

Vec PerturbSet::project(const Vec& x) const {
  if (geometry == Geometry::sphere_cap) return project_cap(*this, x);
  const Vec diff = x - center;
  const double n = diff.norm();
  if (n <= delta) return x;
  return center + (delta / n) * diff;
}

Vec PerturbSet::sample(RngStream& rng) const {
  const Eigen::Index d = center.size();
  if (geometry == Geometry::euclidean_ball) {
    const Vec dir = numerics::sample_sphere(rng, d);
    const double r = delta * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
    return center + r * dir;
  }
  if (d == 1) return center;
  Vec g(d);
  for (Eigen::Index j = 0; j < d; ++j) g(j) = rng.normal();
  const double r = std::min(delta, kWholeSphereDelta) * std::sqrt(rng.uniform());
  return project_cap(*this, along_sphere(center, tangent_direction(center, g), r));
}

Vec PerturbSet::quasi_sample(std::uint64_t index) const {
  const Eigen::Index d = center.size();
  if (geometry == Geometry::euclidean_ball) return numerics::quasi_ball(index, center, delta);
  if (d == 1) return center;
  const Vec u = numerics::r_sequence(index, d + 1);
  const Vec g = numerics::quasi_gaussian(index, d);
  const double r = std::min(delta, kWholeSphereDelta) * std::sqrt(u(d));
  return project_cap(*this, along_sphere(center, tangent_direction(center, g), r));
}

Vec project_cap(const PerturbSet& cap, const Vec& x) {
  if (x.size() != cap.center.size()) throw std::invalid_argument("project_cap: dimension mismatch");
  if (cap.delta <= 0.0) return cap.center;
  const double xn = x.norm();
  if (std::abs(xn - 1.0) <= 1e-12 && (x - cap.center).norm() <= cap.delta) return x;
  if (cap.delta >= kWholeSphereDelta) return normalize_or(x, cap.center);

  Vec p = x;
  for (int pass = 0; pass < 2; ++pass) {
    const Vec diff = p - cap.center;
    const double n = diff.norm();
    if (n > cap.delta) p = cap.center + (cap.delta / n) * diff;
    p = normalize_or(p, cap.center);
  }
  if ((p - cap.center).norm() <= cap.delta + 1e-12) return p;
  return rotate_onto_boundary(cap, normalize_or(x, cap.center));
}

// ---------------------------------------------------------------------------

double DeepPredictor::value(const Vec& x) const { return models::forward_deep(p_, x).f; }

double DeepPredictor::value_and_grad(const Vec& x, Vec& grad) const {
  const auto fw = models::forward_deep(p_, x);
  grad = models::input_grad_deep(p_, fw);
  return fw.f;
}

void Predictor::values_and_grads(const numerics::Mat& X, Vec& f, numerics::Mat& G) const {
  f.resize(X.cols());
  G.resize(X.rows(), X.cols());
  Vec g;
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    f(i) = value_and_grad(X.col(i), g);
    G.col(i) = g;
  }
}

void DeepPredictor::values_and_grads(const numerics::Mat& X, Vec& f, numerics::Mat& G) const {
  using numerics::Mat;
  const int H = p_.depth();
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    if (std::abs(X.col(i).norm() - 1.0) > 1e-8) throw std::invalid_argument("input must lie on the unit sphere");
  }
  const Mat input_pre = p_.input * X;
  std::vector<Mat> pre(static_cast<std::size_t>(H));
  Mat post = p_.input_layer == models::InputLayer::relu ? Mat(input_pre.cwiseMax(0.0)) : input_pre;
  for (int h = 0; h < H; ++h) {
    pre[static_cast<std::size_t>(h)] = p_.layers[static_cast<std::size_t>(h)] * post;
    post = pre[static_cast<std::size_t>(h)].cwiseMax(0.0);
  }
  f = post.transpose() * p_.output;
  Mat g = p_.output.replicate(1, X.cols());
  for (int h = H - 1; h >= 0; --h) {
    g = (pre[static_cast<std::size_t>(h)].array() >= 0.0).select(g, 0.0);
    g = p_.layers[static_cast<std::size_t>(h)].transpose() * g;
  }
  if (p_.input_layer == models::InputLayer::relu) g = (input_pre.array() >= 0.0).select(g, 0.0);
  G = p_.input.transpose() * g;
}

void TwoLayerPredictor::values_and_grads(const numerics::Mat& X, Vec& f, numerics::Mat& G) const {
  using numerics::Mat;
  const Mat Z = p_.w * X;
  const Mat Zb = p_.wbar * X;
  const double scale = 1.0 / std::sqrt(static_cast<double>(p_.width()));
  Mat cw(Z.rows(), Z.cols()), cb(Z.rows(), Z.cols());
  f.resize(X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < Z.rows(); ++r) {
      const double a = p_.signs(r);
      s += a * (act_.value(Z(r, i)) - act_.value(Zb(r, i)));
      cw(r, i) = a * act_.derivative(Z(r, i));
      cb(r, i) = -a * act_.derivative(Zb(r, i));
    }
    f(i) = scale * s;
  }
  G = scale * (p_.w.transpose() * cw + p_.wbar.transpose() * cb);
}

double TwoLayerPredictor::value(const Vec& x) const { return models::forward_two_layer(p_, act_, x); }

double TwoLayerPredictor::value_and_grad(const Vec& x, Vec& grad) const {
  const Vec z = numerics::row_dots(p_.w, x);
  const Vec zb = numerics::row_dots(p_.wbar, x);
  Vec cw(z.size()), cb(z.size());
  double s = 0.0;
  for (Eigen::Index r = 0; r < z.size(); ++r) {
    const double a = p_.signs(r);
    s += a * (act_.value(z(r)) - act_.value(zb(r)));
    cw(r) = a * act_.derivative(z(r));
    cb(r) = -a * act_.derivative(zb(r));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(p_.width()));
  grad = scale * (p_.w.transpose() * cw + p_.wbar.transpose() * cb);
  return scale * s;
}

Vec Lift::apply(const Vec& x) const {
  const Eigen::Index d = x.size();
  Vec u(d + 1);
  u.head(d) = scale * (x - shift);
  u(d) = 1.0;
  return u / u.norm();
}

Vec Lift::pullback(const Vec& x, const Vec& g) const {
  const Eigen::Index d = x.size();
  Vec u(d + 1);
  u.head(d) = scale * (x - shift);
  u(d) = 1.0;
  const double n = u.norm();
  const Vec phi = u / n;
  const Vec proj = (g - g.dot(phi) * phi) / n;
  return scale * proj.head(d);
}

double LiftedPredictor::value_and_grad(const Vec& x, Vec& grad) const {
  Vec inner_grad;
  const double f = inner_.value_and_grad(lift_.apply(x), inner_grad);
  grad = lift_.pullback(x, inner_grad);
  return f;
}

// ---------------------------------------------------------------------------

CompatibilityReport check_compatible(const Dataset& ds) {
  CompatibilityReport rep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = i + 1; j < ds.size(); ++j) {
      if (ds.examples[i].y == ds.examples[j].y) continue;
      if ((ds.examples[i].x - ds.examples[j].x).norm() <= 2.0 * ds.delta) {
        rep.compatible = false;
        rep.violations.emplace_back(i, j);
      }
    }
  }
  return rep;
}

Dataset make_toy_dataset(RngStream& rng, std::size_t n, Eigen::Index d, double delta, double gap) {
  if (n == 0 || d < 1) throw std::invalid_argument("make_toy_dataset: need n >= 1 and d >= 1");
  if (delta < 0.0) throw std::invalid_argument("make_toy_dataset: delta must be >= 0");
  Dataset ds;
  ds.delta = delta;
  const double min_sep = 2.0 * delta + gap;
  constexpr int kMaxTries = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = (i % 2 == 0) ? 1 : -1;
    int tries = 0;
    for (;;) {
      if (++tries > kMaxTries) throw std::runtime_error("make_toy_dataset: cannot place a compatible point");
      Vec x = numerics::sample_sphere(rng, d);
      bool ok = true;
      for (const auto& e : ds.examples) {
        if (e.y != y && (e.x - x).norm() <= min_sep) {
          ok = false;
          break;
        }
      }
      if (ok) {
        ds.examples.push_back({std::move(x), y});
        break;
      }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------

std::string_view attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::identity:
      return "identity";
    case AttackKind::random:
      return "random";
    case AttackKind::fgsm:
      return "fgsm";
    case AttackKind::pgd:
      return "pgd";
  }
  return "?";
}

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "identity") return AttackKind::identity;
  if (name == "random") return AttackKind::random;
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "pgd") return AttackKind::pgd;
  throw std::invalid_argument("unknown attack kind: " + std::string(name));
}

void AttackSpec::validate() const {
  if (kind == AttackKind::pgd) {
    if (steps < 1) throw std::invalid_argument("pgd attack needs steps >= 1");
    if (!(step_size > 0.0)) throw std::invalid_argument("pgd attack needs step_size > 0");
    if (restarts < 1) throw std::invalid_argument("pgd attack needs restarts >= 1");
    if (!(step_decay > 0.0) || step_decay > 1.0) throw std::invalid_argument("pgd step_decay must be in (0, 1]");
  }
  if (kind == AttackKind::fgsm && step_size < 0.0) throw std::invalid_argument("fgsm step_size must be >= 0");
}

AttackResult attack(const AttackSpec& spec, const Predictor& model, const LossFn& loss, const PerturbSet& set, int y,
                    RngStream rng) {
  return attack_batch(spec, model, loss, {set}, {y}, {rng}).front();
}

std::vector<AttackResult> attack_batch(const AttackSpec& spec, const Predictor& model, const LossFn& loss,
                                       const std::vector<PerturbSet>& sets, const std::vector<int>& y,
                                       const std::vector<RngStream>& rngs) {
  const std::size_t n = sets.size();
  if (y.size() != n || rngs.size() != n) throw std::invalid_argument("attack_batch: argument lengths differ");
  std::vector<AttackResult> out(n);
  if (n == 0) return out;
  const Eigen::Index d = sets.front().center.size();
  const auto col = [](std::size_t i) { return static_cast<Eigen::Index>(i); };
  numerics::Mat X(d, col(n)), G;
  Vec f;
  auto record = [&](std::size_t i, AttackResult& slot) {
    slot.point = X.col(col(i));
    slot.f = f(col(i));
    slot.loss = loss.value(slot.f, y[i]);
  };
  for (std::size_t i = 0; i < n; ++i) X.col(col(i)) = sets[i].center;

  switch (spec.kind) {
    case AttackKind::identity:
    case AttackKind::random: {
      if (spec.kind == AttackKind::random) {
        for (std::size_t i = 0; i < n; ++i) {
          RngStream r = rngs[i];
          X.col(col(i)) = sets[i].sample(r);
        }
      }
      model.values_and_grads(X, f, G);
      for (std::size_t i = 0; i < n; ++i) record(i, out[i]);
      return out;
    }
    case AttackKind::fgsm: {
      model.values_and_grads(X, f, G);
      std::vector<char> moved(n, 0);
      for (std::size_t i = 0; i < n; ++i) {
        record(i, out[i]);
        Vec g = G.col(col(i)) * loss.derivative(f(col(i)), y[i]);
        const double gn = g.norm();
        if (!(gn > 0.0)) continue;
        const double step = spec.step_size > 0.0 ? spec.step_size : sets[i].delta;
        X.col(col(i)) = sets[i].project(sets[i].center + (step / gn) * g);
        moved[i] = 1;
      }
      model.values_and_grads(X, f, G);
      for (std::size_t i = 0; i < n; ++i) {
        if (moved[i]) record(i, out[i]);
      }
      return out;
    }
    case AttackKind::pgd: {
      model.values_and_grads(X, f, G);
      for (std::size_t i = 0; i < n; ++i) record(i, out[i]);
      std::vector<char> active(n);
      for (int r = 0; r < spec.restarts; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
          active[i] = 1;
          if (r == 0) {
            X.col(col(i)) = sets[i].center;
          } else {
            RngStream rs = rngs[i].fork(static_cast<std::uint64_t>(r));
            X.col(col(i)) = sets[i].sample(rs);
          }
        }
        double step = spec.step_size;
        for (int k = 0; k <= spec.steps; ++k) {
          model.values_and_grads(X, f, G);
          bool any = false;
          for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            const double l = loss.value(f(col(i)), y[i]);
            if (l > out[i].loss) record(i, out[i]);
            if (k == spec.steps) continue;
            Vec g = G.col(col(i)) * loss.derivative(f(col(i)), y[i]);
            const double gn = g.norm();
            if (!(gn > 0.0)) {
              active[i] = 0;
              continue;
            }
            X.col(col(i)) = sets[i].project(X.col(col(i)) + (step / gn) * g);
            any = true;
          }
          if (!any) break;
          step *= spec.step_decay;
        }
      }
      return out;
    }
  }
  throw std::logic_error("unreachable attack kind");
}

double plain_loss(const Predictor& model, const Dataset& ds, const LossFn& loss) {
  if (ds.size() == 0) return 0.0;
  double s = 0.0;
  for (const auto& e : ds.examples) s += loss.value(model.value(e.x), e.y);
  return s / static_cast<double>(ds.size());
}

double surrogate_loss(const AttackSpec& spec, const Predictor& model, const Dataset& ds, const LossFn& loss,
                      int workers) {
  spec.validate();
  if (ds.size() == 0) return 0.0;
  std::vector<double> per(ds.size());
  parallel_for(ds.size(), workers, [&](std::size_t i) {
    per[i] = attack(spec, model, loss, ds.set_of(i), ds.examples[i].y, spec.rng.fork(i)).loss;
  });
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(ds.size());
}

RobustLossReport robust_loss_report(const Predictor& model, const Dataset& ds, const LossFn& loss, int budget,
                                    const RngStream& rng, int workers, const std::vector<AttackSpec>& include) {
  for (const auto& spec : include) spec.validate();
  if (budget < 1) throw std::invalid_argument("robust_loss_oracle: budget must be >= 1");
  RobustLossReport rep;
  rep.per_example.assign(ds.size(), 0.0);
  rep.worst_points.assign(ds.size(), Vec());
  parallel_for(ds.size(), workers, [&](std::size_t i) {
    const PerturbSet set = ds.set_of(i);
    const int y = ds.examples[i].y;
    AttackSpec pgd;
    pgd.kind = AttackKind::pgd;
    pgd.steps = 50;
    pgd.restarts = budget;
    pgd.step_size = std::max(set.delta, 1e-12) / 2.0;
    pgd.step_decay = 0.93;
    AttackResult best = attack(pgd, model, loss, set, y, rng.fork(i));
    const auto samples = static_cast<std::uint64_t>(budget) * 100;
    for (std::uint64_t k = 0; k < samples; ++k) {
      const Vec x = set.quasi_sample(k);
      const double f = model.value(x);
      const double l = loss.value(f, y);
      if (l > best.loss) best = {x, f, l};
    }
    for (const auto& spec : include) {
      AttackResult r = attack(spec, model, loss, set, y, spec.rng.fork(i));
      if (r.loss > best.loss) best = std::move(r);
    }
    rep.per_example[i] = best.loss;
    rep.worst_points[i] = best.point;
  });
  double s = 0.0;
  for (double v : rep.per_example) s += v;
  rep.loss = ds.size() ? s / static_cast<double>(ds.size()) : 0.0;
  return rep;
}

double robust_loss_oracle(const Predictor& model, const Dataset& ds, const LossFn& loss, int budget,
                          const RngStream& rng, int workers, const std::vector<AttackSpec>& include) {
  return robust_loss_report(model, ds, loss, budget, rng, workers, include).loss;
}

}  // namespace advlab::attacks
