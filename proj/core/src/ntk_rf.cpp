#include "advlab/ntk_rf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "advlab/checkpoint.hpp"
#include "advlab/parallel.hpp"
#include "json.hpp"

namespace advlab::ntk_rf {
namespace {

constexpr std::size_t kChunk = 65536;

Vec draw_direction(InitLaw law, RngStream& rng, Eigen::Index d) {
  if (law == InitLaw::gaussian_identity) return numerics::gaussian_vec(rng, d, 1.0);
  return numerics::sample_sphere_radius(rng, d, std::sqrt(static_cast<double>(d)));
}

void require_unit(const Vec& x) {
  if (std::abs(x.norm() - 1.0) > 1e-8) throw std::invalid_argument("kernel inputs must be unit vectors");
}

double sigma_prime_sum(const Activation& act, const Mat& dirs, const Vec& x, const Vec& y) {
  const Vec zx = dirs * x;
  const Vec zy = dirs * y;
  double s = 0.0;
  for (Eigen::Index k = 0; k < zx.size(); ++k) s += act.derivative(zx(k)) * act.derivative(zy(k));
  return s;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json spec_json(const KernelSpec& s) {
  return {{"activation", std::string(s.activation.name())},
          {"init_law", std::string(models::init_law_name(s.init_law))},
          {"mc_samples", s.mc_samples},
          {"closed_form", s.closed_form}};
}

KernelSpec spec_from_json(const nlohmann::json& j) {
  KernelSpec s;
  s.activation = Activation::parse(j.at("activation").get<std::string>());
  s.init_law = models::parse_init_law(j.at("init_law").get<std::string>());
  s.mc_samples = j.at("mc_samples").get<std::size_t>();
  s.closed_form = j.at("closed_form").get<bool>();
  return s;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

Mat rows_of(const std::vector<Vec>& vs, Eigen::Index d) {
  Mat m(static_cast<Eigen::Index>(vs.size()), d);
  for (std::size_t i = 0; i < vs.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = vs[i].transpose();
  return m;
}

}  // namespace

void KernelSpec::validate() const {
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
}

bool KernelSpec::has_closed_form() const {
  return closed_form && activation.kind != models::ActivationKind::softplus;
}

KernelEstimate ntk_mc(const KernelSpec& spec, const RngStream& rng, const Vec& x, const Vec& y, int workers) {
  spec.validate();
  require_unit(x);
  require_unit(y);
  if (x.size() != y.size()) throw std::invalid_argument("ntk_mc: dimension mismatch");
  const double ip = x.dot(y);
  const std::size_t chunks = (spec.mc_samples + kChunk - 1) / kChunk;
  std::vector<double> sum(chunks, 0.0), sum_sq(chunks, 0.0);
  parallel_for(chunks, workers, [&](std::size_t c) {
    RngStream s = rng.fork(c);
    const std::size_t count = std::min(kChunk, spec.mc_samples - c * kChunk);
    double a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const Vec w = draw_direction(spec.init_law, s, x.size());
      const double v = ip * spec.activation.derivative(w.dot(x)) * spec.activation.derivative(w.dot(y));
      a += v;
      b += v * v;
    }
    sum[c] = a;
    sum_sq[c] = b;
  });
  double a = 0.0, b = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    a += sum[c];
    b += sum_sq[c];
  }
  const auto n = static_cast<double>(spec.mc_samples);
  KernelEstimate est;
  est.mean = a / n;
  const double var = n > 1.0 ? std::max(0.0, (b - n * est.mean * est.mean) / (n - 1.0)) : 0.0;
  est.std_error = std::sqrt(var / n);
  return est;
}

double relu_ntk(const Vec& x, const Vec& y) {
  const double theta = numerics::angle_between(x, y);
  return x.dot(y) * (std::numbers::pi - theta) / (2.0 * std::numbers::pi);
}

double quad_relu_ntk(const Vec& x, const Vec& y) {
  const double theta = numerics::angle_between(x, y);
  const double c = x.dot(y);
  return (2.0 / std::numbers::pi) * c * (std::sin(theta) + (std::numbers::pi - theta) * std::cos(theta));
}

Mat draw_directions(InitLaw law, RngStream& rng, Eigen::Index count, Eigen::Index d) {
  if (count < 1 || d < 1) throw std::invalid_argument("draw_directions: need count >= 1 and d >= 1");
  Mat out(count, d);
  for (Eigen::Index r = 0; r < count; ++r) out.row(r) = draw_direction(law, rng, d).transpose();
  return out;
}

Kernel::Kernel(KernelSpec spec, Eigen::Index d, const RngStream& rng) : spec_(spec), dim_(d) {
  spec_.validate();
  if (d < 1) throw std::invalid_argument("Kernel: d must be >= 1");
  if (!spec_.has_closed_form()) {
    RngStream s = rng;
    mc_dirs_ = draw_directions(spec_.init_law, s, static_cast<Eigen::Index>(spec_.mc_samples), d);
  }
}

Kernel Kernel::from_directions(KernelSpec spec, Mat directions) {
  Kernel k;
  k.spec_ = spec;
  k.dim_ = directions.cols();
  k.mc_dirs_ = std::move(directions);
  if (k.mc_dirs_.size() == 0 && !spec.has_closed_form()) throw std::invalid_argument("kernel has no closed form");
  return k;
}

double Kernel::operator()(const Vec& x, const Vec& y) const {
  if (x.size() != dim_ || y.size() != dim_) throw std::invalid_argument("kernel: dimension mismatch");
  if (!exact()) {
    return x.dot(y) * sigma_prime_sum(spec_.activation, mc_dirs_, x, y) / static_cast<double>(mc_dirs_.rows());
  }
  if (spec_.activation.kind == models::ActivationKind::relu) return relu_ntk(x, y);
  return quad_relu_ntk(x, y);
}

Mat Kernel::gram(const std::vector<Vec>& xs, const std::vector<Vec>& ys, int workers) const {
  Mat g(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(ys.size()));
  if (!exact()) {
    // K = (X Y^T) .* (Phi_x Phi_y^T) / S with Phi = s'(X W^T).
    const Mat X = rows_of(xs, dim_), Y = rows_of(ys, dim_);
    const Mat px = (X * mc_dirs_.transpose()).unaryExpr([&](double z) { return spec_.activation.derivative(z); });
    const Mat py = (Y * mc_dirs_.transpose()).unaryExpr([&](double z) { return spec_.activation.derivative(z); });
    g = (X * Y.transpose()).cwiseProduct(px * py.transpose()) / static_cast<double>(mc_dirs_.rows());
    return g;
  }
  parallel_for(xs.size(), workers, [&](std::size_t i) {
    for (std::size_t j = 0; j < ys.size(); ++j) {
      g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*this)(xs[i], ys[j]);
    }
  });
  return g;
}

Vec hemisphere_lift(const Vec& x) {
  Vec z(x.size() + 1);
  z.head(x.size()) = x;
  z(x.size()) = 1.0;
  return z / z.norm();
}

double KernelFit::predict_kernel_space(const Vec& z) const {
  double s = 0.0;
  for (std::size_t t = 0; t < anchors.size(); ++t) s += coeffs(static_cast<Eigen::Index>(t)) * kernel(z, anchors[t]);
  return s;
}

double KernelFit::predict(const Vec& x) const { return predict_kernel_space(transform(x)); }

double KernelFit::rf_norm_bound(double reach) const {
  return kernel.spec().activation.derivative_bound(reach) * coeffs.cwiseAbs().sum();
}

KernelFit kernel_fit_anchors(const Kernel& kernel, std::vector<Vec> anchors, Vec targets, double lambda, bool lifted,
                             int workers) {
  if (anchors.empty()) throw std::invalid_argument("kernel_fit: no anchors");
  if (static_cast<Eigen::Index>(anchors.size()) != targets.size()) {
    throw std::invalid_argument("kernel_fit: anchor and target counts differ");
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument("kernel_fit: lambda must be >= 0");
  for (const Vec& a : anchors) require_unit(a);
  const Mat gram = kernel.gram(anchors, anchors, workers);
  Mat sys = 0.5 * (gram + gram.transpose());
  sys.diagonal().array() += lambda;
  Eigen::LLT<Mat> llt(sys);
  const bool bad = llt.info() != Eigen::Success || llt.rcond() < 1e-13;
  if (bad) {
    if (lambda == 0.0) {
      throw std::invalid_argument("kernel_fit: Gram matrix is singular or ill-conditioned; use lambda > 0");
    }
    throw std::runtime_error("kernel_fit: regularized Gram matrix is not positive definite");
  }
  KernelFit fit;
  fit.kernel = kernel;
  fit.lambda = lambda;
  fit.lifted = lifted;
  fit.coeffs = llt.solve(targets);
  fit.max_residual = (gram * fit.coeffs - targets).cwiseAbs().maxCoeff();
  fit.anchors = std::move(anchors);
  fit.targets = std::move(targets);
  return fit;
}

KernelFit kernel_fit(const KernelSpec& spec, const attacks::Dataset& ds, const FitOptions& opts, const RngStream& rng) {
  spec.validate();
  if (ds.size() == 0) throw std::invalid_argument("kernel_fit: empty dataset");
  if (opts.cap_samples_per_point < 0) throw std::invalid_argument("kernel_fit: cap_samples_per_point must be >= 0");
  std::vector<Vec> anchors;
  std::vector<double> targets;
  const RngStream caps = rng.fork(1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto set = ds.set_of(i);
    const double target = opts.target_scale * ds.examples[i].y;
    anchors.push_back(set.center);
    targets.push_back(target);
    RngStream s = caps.fork(i);
    for (int k = 0; k < opts.cap_samples_per_point; ++k) {
      anchors.push_back(set.sample(s));
      targets.push_back(target);
    }
  }
  if (opts.hemisphere_lift) {
    for (Vec& a : anchors) a = hemisphere_lift(a);
  }
  const Eigen::Index kd = anchors.front().size();
  const Kernel kernel(spec, kd, rng.fork(0));
  return kernel_fit_anchors(kernel, std::move(anchors), Eigen::Map<const Vec>(targets.data(), targets.size()),
                            opts.lambda, opts.hemisphere_lift, opts.workers);
}

// ---------------------------------------------------------------------------

double RfModel::eval(const Vec& z) const {
  const Vec proj = directions * z;
  const Vec lin = coeffs * z;
  double s = 0.0;
  for (Eigen::Index r = 0; r < proj.size(); ++r) s += lin(r) * activation.derivative(proj(r));
  return s;
}

RfModel rf_from_directions(const KernelFit& fit, Mat directions) {
  const Eigen::Index d = fit.kernel.dim();
  if (directions.cols() != d) throw std::invalid_argument("rf_from_directions: direction dimension mismatch");
  const Eigen::Index M = directions.rows();
  if (M < 1) throw std::invalid_argument("rf_from_directions: need at least one direction");
  const Activation act = fit.kernel.spec().activation;
  const Mat anchors = rows_of(fit.anchors, d);  // T x d
  // S(r, t) = s'(w_r . x_t) a_t / M, so C = S X.
  Mat s = (directions * anchors.transpose()).unaryExpr([&](double z) { return act.derivative(z); });
  s = s * fit.coeffs.asDiagonal();
  RfModel model;
  model.coeffs = s * anchors / static_cast<double>(M);
  model.directions = std::move(directions);
  model.activation = act;
  const double reach = model.directions.rowwise().norm().maxCoeff();
  model.coeff_bound = fit.rf_norm_bound(reach) / static_cast<double>(M);
  return model;
}

RfModel rf_construct(const KernelFit& fit, RngStream& rng, Eigen::Index M) {
  return rf_from_directions(fit, draw_directions(fit.kernel.spec().init_law, rng, M, fit.kernel.dim()));
}

double rf_sup_error(const RfModel& model, const KernelFit& fit, std::size_t probe_count, int workers) {
  if (probe_count < 1) throw std::invalid_argument("rf_sup_error: probe_count must be >= 1");
  const Eigen::Index d = fit.lifted ? fit.kernel.dim() - 1 : fit.kernel.dim();
  auto err = [&](const Vec& x) { return std::abs(fit.predict(x) - model.eval(fit.transform(x))); };

  std::vector<double> probe_err(probe_count);
  parallel_for(probe_count, workers, [&](std::size_t k) { probe_err[k] = err(numerics::quasi_sphere(k, d)); });
  double best = *std::max_element(probe_err.begin(), probe_err.end());

  std::vector<std::size_t> starts;
  for (std::size_t n = probe_count; n >= 1; n /= 2) {
    const auto it = std::max_element(probe_err.begin(), probe_err.begin() + static_cast<std::ptrdiff_t>(n));
    const auto idx = static_cast<std::size_t>(it - probe_err.begin());
    if (std::find(starts.begin(), starts.end(), idx) == starts.end()) starts.push_back(idx);
  }
  std::sort(starts.begin(), starts.end());

  // Pattern search on the sphere: try +-step along each axis, renormalize,
  // halve the step when no move helps.
  std::vector<double> refined(starts.size());
  parallel_for(starts.size(), workers, [&](std::size_t s) {
    Vec x = numerics::quasi_sphere(starts[s], d);
    double cur = probe_err[starts[s]];
    double step = 0.1;
    for (int round = 0; round < 40 && step > 1e-6; ++round) {
      bool moved = false;
      for (Eigen::Index j = 0; j < d; ++j) {
        for (double sgn : {1.0, -1.0}) {
          Vec y = x;
          y(j) += sgn * step;
          const double n = y.norm();
          if (!(n > 0.0)) continue;
          y /= n;
          const double e = err(y);
          if (e > cur) {
            cur = e;
            x = std::move(y);
            moved = true;
          }
        }
      }
      if (!moved) step *= 0.5;
    }
    refined[s] = cur;
  });
  for (double v : refined) best = std::max(best, v);
  return best;
}

Embedding embed_rf_into_net(const RfModel& model, const models::TwoLayerParams& params0) {
  if (model.directions.rows() != params0.pairs() || model.directions.cols() != params0.input_dim()) {
    throw std::invalid_argument("embed_rf_into_net: RF model does not match the net (need M == m/2 and equal d)");
  }
  if (model.directions != params0.w) {
    throw std::invalid_argument("embed_rf_into_net: RF directions must be the net's initial rows");
  }
  const double beta = std::sqrt(static_cast<double>(params0.width()) / 4.0);
  Embedding e;
  e.params = params0;
  for (Eigen::Index r = 0; r < params0.pairs(); ++r) {
    const double a = params0.signs(r);
    e.params.w.row(r) += a * beta * model.coeffs.row(r);
    e.params.wbar.row(r) -= a * beta * model.coeffs.row(r);
  }
  e.distance = models::distance_fro(e.params, params0);
  return e;
}

double linearized_output(const models::TwoLayerParams& params0, const models::TwoLayerParams& params,
                         const Activation& act, const Vec& x) {
  const auto g = models::grad_two_layer(params0, act, x);
  return models::forward_two_layer(params0, act, x) + models::inner_displacement(g, params, params0);
}

// ---------------------------------------------------------------------------

void write_gram_csv(const std::filesystem::path& path, const Mat& gram) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index i = 0; i < gram.rows(); ++i) {
    for (Eigen::Index j = 0; j < gram.cols(); ++j) out << (j ? "," : "") << fmt(gram(i, j));
    out << '\n';
  }
}

void save(const std::filesystem::path& stem, const KernelFit& fit) {
  const Eigen::Index d = fit.kernel.dim();
  checkpoint::write_tensors(checkpoint::bin_path(stem),
                            {rows_of(fit.anchors, d), Mat(fit.targets), Mat(fit.coeffs), fit.kernel.mc_directions()});
  write_json(checkpoint::json_path(stem), {{"kind", "kernel_fit"},
                                           {"d", d},
                                           {"anchors", fit.anchors.size()},
                                           {"lambda", fit.lambda},
                                           {"lifted", fit.lifted},
                                           {"max_residual", fit.max_residual},
                                           {"kernel", spec_json(fit.kernel.spec())}});
}

void save(const std::filesystem::path& stem, const RfModel& model) {
  checkpoint::write_tensors(checkpoint::bin_path(stem), {model.directions, model.coeffs});
  write_json(checkpoint::json_path(stem), {{"kind", "rf_model"},
                                           {"M", model.size()},
                                           {"d", model.directions.cols()},
                                           {"activation", std::string(model.activation.name())},
                                           {"coeff_bound", model.coeff_bound}});
}

KernelFit load_kernel_fit(const std::filesystem::path& stem) {
  const auto meta = read_json(checkpoint::json_path(stem));
  if (meta.at("kind") != "kernel_fit") throw std::runtime_error("checkpoint is not a kernel fit");
  auto t = checkpoint::read_tensors(checkpoint::bin_path(stem));
  if (t.size() != 4) throw std::runtime_error("kernel fit tensor count mismatch");
  const KernelSpec spec = spec_from_json(meta.at("kernel"));
  KernelFit fit;
  fit.kernel = Kernel::from_directions(spec, t[3]);
  if (fit.kernel.exact()) fit.kernel = Kernel(spec, meta.at("d").get<Eigen::Index>(), RngStream());
  fit.lambda = meta.at("lambda").get<double>();
  fit.lifted = meta.at("lifted").get<bool>();
  fit.max_residual = meta.at("max_residual").get<double>();
  for (Eigen::Index i = 0; i < t[0].rows(); ++i) fit.anchors.push_back(t[0].row(i).transpose());
  fit.targets = t[1].col(0);
  fit.coeffs = t[2].col(0);
  if (static_cast<Eigen::Index>(fit.anchors.size()) != fit.coeffs.size()) {
    throw std::runtime_error("kernel fit shape mismatch");
  }
  return fit;
}

RfModel load_rf_model(const std::filesystem::path& stem) {
  const auto meta = read_json(checkpoint::json_path(stem));
  if (meta.at("kind") != "rf_model") throw std::runtime_error("checkpoint is not an RF model");
  auto t = checkpoint::read_tensors(checkpoint::bin_path(stem));
  if (t.size() != 2 || t[0].rows() != t[1].rows() || t[0].cols() != t[1].cols()) {
    throw std::runtime_error("RF model shape mismatch");
  }
  RfModel model;
  model.directions = std::move(t[0]);
  model.coeffs = std::move(t[1]);
  model.activation = Activation::parse(meta.at("activation").get<std::string>());
  model.coeff_bound = meta.at("coeff_bound").get<double>();
  return model;
}

}  // namespace advlab::ntk_rf
