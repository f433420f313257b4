#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "advlab/parallel.hpp"
#include "advlab/training.hpp"

namespace advlab::training {
namespace {

bool same_patterns(const models::DeepForward& a, const models::DeepForward& b) {
  if ((a.input_pre.array() >= 0.0).matrix() != (b.input_pre.array() >= 0.0).matrix()) return false;
  for (std::size_t h = 0; h < a.pre.size(); ++h) {
    if ((a.pre[h].array() >= 0.0).matrix() != (b.pre[h].array() >= 0.0).matrix()) return false;
  }
  return true;
}

void push_case(GradCheckReport& rep, double analytic, double numeric, double floor) {
  const double err = relative_error(analytic, numeric, floor);
  rep.cases.push_back({analytic, numeric, err});
  rep.max_rel_error = std::max(rep.max_rel_error, err);
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

LemmaReport lemma_diagnostics(const DeepNetParams& init, int trials, RngStream& rng, int workers) {
  if (trials < 1) throw std::invalid_argument("lemma_diagnostics: trials must be >= 1");
  const Eigen::Index m = init.width();
  const int H = init.depth();
  LemmaReport rep;
  rep.m = m;
  rep.H = H;
  rep.trials = trials;
  rep.output_norm_ratio = init.output.norm() / std::sqrt(static_cast<double>(m));

  std::vector<Vec> xs;
  for (int k = 0; k < trials; ++k) xs.push_back(numerics::sample_sphere(rng, init.input_dim()));

  struct Stats {
    std::vector<double> hidden;
    std::vector<double> backward;
    std::vector<double> layer_grad;
  };
  std::vector<Stats> per(static_cast<std::size_t>(trials));
  const double root_mh = std::sqrt(static_cast<double>(m) * H);
  parallel_for(per.size(), workers, [&](std::size_t k) {
    const auto fw = models::forward_deep(init, xs[k]);
    const auto back = models::backprop_deep(init, fw);
    Stats& s = per[k];
    for (const Vec& v : fw.post) s.hidden.push_back(v.norm());
    for (int h = 1; h <= H; ++h) {
      const auto i = static_cast<std::size_t>(h - 1);
      // a^T D^(H) W^(H) ... D^(h) W^(h) = (W^(h)^T b^(h))^T
      s.backward.push_back((init.layers[i].transpose() * back[i]).norm() / root_mh);
      // |b^(h) x^(h-1)^T|_F = |b^(h)| |x^(h-1)|
      s.layer_grad.push_back(back[i].norm() * fw.post[i].norm() / root_mh);
    }
  });

  std::size_t inside = 0, total = 0;
  rep.hidden_norm_min = std::numeric_limits<double>::infinity();
  rep.backward_ratio_min = std::numeric_limits<double>::infinity();
  rep.layer_grad_ratio_min = std::numeric_limits<double>::infinity();
  for (const Stats& s : per) {
    for (double v : s.hidden) {
      ++total;
      if (v >= 2.0 / 3.0 && v <= 4.0 / 3.0) ++inside;
      rep.hidden_norm_min = std::min(rep.hidden_norm_min, v);
      rep.hidden_norm_max = std::max(rep.hidden_norm_max, v);
    }
    for (double v : s.backward) {
      rep.backward_ratio_min = std::min(rep.backward_ratio_min, v);
      rep.backward_ratio_max = std::max(rep.backward_ratio_max, v);
    }
    for (double v : s.layer_grad) {
      rep.layer_grad_ratio_min = std::min(rep.layer_grad_ratio_min, v);
      rep.layer_grad_ratio_max = std::max(rep.layer_grad_ratio_max, v);
    }
  }
  rep.hidden_norm_rate = static_cast<double>(inside) / static_cast<double>(total);
  return rep;
}

GradCheckReport gradcheck_deep(Eigen::Index m, Eigen::Index d, int H, int cases, RngStream& rng, double h) {
  if (cases < 1 || !(h > 0.0)) throw std::invalid_argument("gradcheck_deep: need cases >= 1 and h > 0");
  GradCheckReport rep;
  constexpr int kMaxRedraws = 1000;
  for (int c = 0; c < cases; ++c) {
    RngStream init_rng = rng.fork(static_cast<std::uint64_t>(c));
    const auto p = models::init_deep(init_rng, m, d, H);
    RngStream draw = init_rng.fork(1000);
    for (int attempt = 0;; ++attempt) {
      if (attempt >= kMaxRedraws) throw std::runtime_error("gradcheck_deep: no kink-free stencil found");
      const Vec x = numerics::sample_sphere(draw, d);
      std::vector<Mat> dir;
      for (int k = 0; k < H; ++k) {
        Mat v = numerics::gaussian_mat(draw, m, m, 1.0);
        dir.push_back(v / v.norm());
      }
      auto plus = p, minus = p;
      for (int k = 0; k < H; ++k) {
        plus.layers[static_cast<std::size_t>(k)] += h * dir[static_cast<std::size_t>(k)];
        minus.layers[static_cast<std::size_t>(k)] -= h * dir[static_cast<std::size_t>(k)];
      }
      const auto fw = models::forward_deep(p, x);
      const auto fp = models::forward_deep(plus, x);
      const auto fm = models::forward_deep(minus, x);
      if (!same_patterns(fw, fp) || !same_patterns(fw, fm)) {
        ++rep.skipped_kinks;
        continue;
      }
      const auto grads = models::grad_deep(p, fw);
      double analytic = 0.0;
      for (int k = 0; k < H; ++k) {
        analytic += (grads[static_cast<std::size_t>(k)].array() * dir[static_cast<std::size_t>(k)].array()).sum();
      }
      push_case(rep, analytic, (fp.f - fm.f) / (2.0 * h), 1e-6);
      break;
    }
  }
  return rep;
}

GradCheckReport gradcheck_two_layer(Eigen::Index m, Eigen::Index d, const models::Activation& act, int cases,
                                    RngStream& rng, double h) {
  if (cases < 1 || !(h > 0.0)) throw std::invalid_argument("gradcheck_two_layer: need cases >= 1 and h > 0");
  GradCheckReport rep;
  for (int c = 0; c < cases; ++c) {
    RngStream case_rng = rng.fork(static_cast<std::uint64_t>(c));
    auto p0 = models::init_two_layer(case_rng, m, d, models::InitLaw::gaussian_identity);
    // Move off the symmetric init so the two blocks differ.
    RngStream draw = case_rng.fork(1000);
    auto p = displace_two_layer(p0, draw, 1.0);
    const Vec x = numerics::sample_sphere(draw, d);
    const auto g = models::grad_two_layer(p, act, x);
    for (int block = 0; block < 2; ++block) {
      for (Eigen::Index r = 0; r < p.pairs(); ++r) {
        for (Eigen::Index j = 0; j < d; ++j) {
          auto q = p;
          Mat& target = block == 0 ? q.w : q.wbar;
          const double orig = target(r, j);
          target(r, j) = orig + h;
          const double fp = models::forward_two_layer(q, act, x);
          target(r, j) = orig - h;
          const double fm = models::forward_two_layer(q, act, x);
          const double analytic = block == 0 ? g.w(r, j) : g.wbar(r, j);
          push_case(rep, analytic, (fp - fm) / (2.0 * h), 1e-3);
        }
      }
    }
  }
  return rep;
}

}  // namespace advlab::training
