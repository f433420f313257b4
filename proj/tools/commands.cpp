#include "commands.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <variant>

#include "advlab/capacity.hpp"
#include "advlab/checkpoint.hpp"
#include "advlab/ntk_rf.hpp"
#include "advlab/training.hpp"
#include "config_reader.hpp"

namespace advlab::tools {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using numerics::RngStream;
using numerics::Vec;

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Library argument checks surface as std::invalid_argument; inside parsing
// they are config errors.
template <class F>
auto checked(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

struct Output {
  fs::path dir;
  std::set<std::string> files;

  void write(const std::string& name, const std::string& bytes) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << bytes;
    files.insert(name);
  }
  void note(const std::string& name) { files.insert(name); }
};

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

struct DatasetSpec {
  std::optional<fs::path> path;
  long n = 16;
  long d = 10;
  double delta = 0.05;
  double gap = 0.05;
  std::uint64_t seed = 0;

  attacks::Dataset load() const {
    if (path) return attacks::read_dataset_jsonl(*path);
    RngStream rng(seed);
    return attacks::make_toy_dataset(rng, static_cast<std::size_t>(n), d, delta, gap);
  }
};

DatasetSpec parse_dataset(Fields f, const fs::path& base, std::uint64_t seed) {
  DatasetSpec s;
  if (f.has("path") == f.has("toy")) throw ConfigError(f.where() + ": give exactly one of path, toy");
  if (f.has("path")) {
    s.path = base / f.text("path");
    if (!fs::exists(*s.path)) throw ConfigError(f.where() + ".path: no such file " + s.path->string());
  } else {
    Fields t = f.object("toy");
    s.n = t.integer("n", 16);
    s.d = t.integer("d", 10);
    s.delta = t.number("delta", 0.05);
    s.gap = t.number("gap", 0.05);
    s.seed = static_cast<std::uint64_t>(t.integer("seed", static_cast<long>(seed)));
    if (s.n < 1 || s.d < 1) throw ConfigError(t.where() + ": n and d must be >= 1");
    if (s.delta < 0.0 || s.gap < 0.0) throw ConfigError(t.where() + ": delta and gap must be >= 0");
    t.done();
  }
  f.done();
  return s;
}

attacks::AttackSpec parse_attack(Fields f) {
  attacks::AttackSpec s;
  const std::string kind = f.text("kind", "identity");
  s.kind = checked(f.where() + ".kind", [&] { return attacks::parse_attack_kind(kind); });
  s.steps = static_cast<int>(f.integer("steps", 1));
  s.step_size = f.number("step_size", 0.0);
  s.restarts = static_cast<int>(f.integer("restarts", 1));
  s.step_decay = f.number("step_decay", 1.0);
  f.done();
  checked(f.where(), [&] { s.validate(); });
  return s;
}

json attack_json(const attacks::AttackSpec& s) {
  return {{"kind", std::string(attacks::attack_kind_name(s.kind))},
          {"steps", s.steps},
          {"step_size", s.step_size},
          {"restarts", s.restarts},
          {"step_decay", s.step_decay}};
}

models::Activation parse_activation(Fields& f, const std::string& fallback) {
  const std::string name = f.text("activation", fallback);
  return checked(f.where() + ".activation", [&] { return models::Activation::parse(name); });
}

models::InitLaw parse_law(Fields& f) {
  const std::string name = f.text("init_law", "gaussian_identity");
  return checked(f.where() + ".init_law", [&] { return models::parse_init_law(name); });
}

std::string csv_line(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s + "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainJob {
  DatasetSpec data;
  training::TrainConfig cfg;
  int oracle_budget = 0;
};

TrainJob parse_train(Fields p, const fs::path& base, std::uint64_t seed) {
  TrainJob job;
  job.data = parse_dataset(p.object("dataset"), base, seed);
  auto& cfg = job.cfg;
  cfg.seed = seed;
  const std::string arch = p.text("arch", "deep");
  const long m = p.integer("m", 256);
  const long d = job.data.path ? 0 : job.data.d;
  if (arch == "deep") {
    training::DeepArch a{m, d, static_cast<int>(p.integer("H", 1))};
    const std::string input = p.text("input_layer", "relu");
    if (input != "relu" && input != "linear") throw ConfigError("params.input_layer: expected relu or linear");
    a.input_layer = input == "relu" ? models::InputLayer::relu : models::InputLayer::linear;
    cfg.arch = a;
    cfg.project = p.boolean("project", true);
  } else if (arch == "two_layer") {
    cfg.arch = training::TwoLayerArch{m, d, parse_activation(p, "softplus"), parse_law(p)};
  } else {
    throw ConfigError("params.arch: expected deep or two_layer");
  }
  cfg.alpha = p.number("alpha");
  cfg.T = static_cast<int>(p.integer("T"));
  cfg.R = p.number("R", 1.0);
  cfg.divergence_limit = p.number("divergence_limit", 1e6);
  cfg.attack = parse_attack(p.object_or_empty("attack"));
  job.oracle_budget = static_cast<int>(p.integer("oracle_budget", 0));
  if (job.oracle_budget < 0) throw ConfigError("params.oracle_budget: must be >= 0");
  p.done();
  if (!job.data.path) checked("params", [&] { cfg.validate(); });
  return job;
}

void set_input_dim(training::TrainConfig& cfg, Eigen::Index d) {
  std::visit([d](auto& a) { a.d = d; }, cfg.arch);
}

RunOutcome exec_train(TrainJob job, Output& out, int workers) {
  const auto ds = job.data.load();
  set_input_dim(job.cfg, ds.dim());
  job.cfg.workers = workers;
  checked("params", [&] { job.cfg.validate(); });
  attacks::write_dataset_jsonl(out.dir / "dataset.jsonl", ds);
  out.note("dataset.jsonl");

  const auto run = training::train(job.cfg, ds);
  out.write("train.csv", training::train_csv(run));
  json summary = json::parse(training::train_summary_json(job.cfg, run));

  if (const auto* deep = std::get_if<models::DeepNetParams>(&run.best_params)) {
    checkpoint::save(out.dir / "best", checkpoint::DeepCheckpoint{*deep, job.cfg.seed});
  } else {
    const auto& arch = std::get<training::TwoLayerArch>(job.cfg.arch);
    checkpoint::save(out.dir / "best",
                     checkpoint::TwoLayerCheckpoint{std::get<models::TwoLayerParams>(run.best_params), arch.act, job.cfg.seed});
  }
  out.note("best.bin");
  out.note("best.json");

  RunOutcome res;
  res.metric_name = "min_surrogate_loss";
  res.metric = run.min_surrogate;
  if (run.status == training::RunStatus::diverged) {
    res.exit_code = kExitNumerical;
    res.status = "diverged";
    res.reason = "divergence: " + run.message;
  } else if (job.oracle_budget > 0 && !job.cfg.lift) {
    std::vector<attacks::AttackSpec> include{job.cfg.attack};
    include[0].rng = training::attack_stream(job.cfg.seed);
    const RngStream orng = RngStream(job.cfg.seed).fork(0x0c1e);
    double oracle = 0.0;
    if (const auto* deep = std::get_if<models::DeepNetParams>(&run.best_params)) {
      oracle = attacks::robust_loss_oracle(attacks::DeepPredictor(*deep), ds, models::LossFn{}, job.oracle_budget, orng,
                                           workers, include);
    } else {
      const auto& arch = std::get<training::TwoLayerArch>(job.cfg.arch);
      oracle = attacks::robust_loss_oracle(
          attacks::TwoLayerPredictor(std::get<models::TwoLayerParams>(run.best_params), arch.act), ds, models::LossFn{},
          job.oracle_budget, orng, workers, include);
    }
    summary["oracle_loss_at_argmin"] = oracle;
    summary["oracle_budget"] = job.oracle_budget;
  }
  summary["command"] = "train";
  summary["exit_code"] = res.exit_code;
  out.write("summary.json", summary.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// attack-eval
// ---------------------------------------------------------------------------

struct AttackEvalJob {
  DatasetSpec data;
  fs::path checkpoint;
  std::string arch;
  std::vector<attacks::AttackSpec> attacks;
  int oracle_budget = 2;
  std::uint64_t seed = 0;
};

AttackEvalJob parse_attack_eval(Fields p, const fs::path& base, std::uint64_t seed) {
  AttackEvalJob job;
  job.seed = seed;
  job.data = parse_dataset(p.object("dataset"), base, seed);
  Fields model = p.object("model");
  job.checkpoint = base / model.text("checkpoint");
  job.arch = model.text("arch");
  model.done();
  if (job.arch != "deep" && job.arch != "two_layer") throw ConfigError("params.model.arch: expected deep or two_layer");
  if (!fs::exists(checkpoint::bin_path(job.checkpoint)))
    throw ConfigError("params.model.checkpoint: no such checkpoint " + job.checkpoint.string());
  if (p.has("attacks")) {
    const json& list = p.raw("attacks");
    if (!list.is_array() || list.empty()) throw ConfigError("params.attacks: expected a non-empty array");
    for (std::size_t i = 0; i < list.size(); ++i)
      job.attacks.push_back(parse_attack(Fields(list[i], "params.attacks[" + std::to_string(i) + "]")));
  } else {
    job.attacks.push_back(attacks::AttackSpec{});
  }
  job.oracle_budget = static_cast<int>(p.integer("oracle_budget", 2));
  if (job.oracle_budget < 0) throw ConfigError("params.oracle_budget: must be >= 0");
  p.done();
  return job;
}

RunOutcome exec_attack_eval(const AttackEvalJob& job, Output& out, int workers) {
  const auto ds = job.data.load();
  std::optional<models::DeepNetParams> deep;
  std::optional<checkpoint::TwoLayerCheckpoint> two;
  std::unique_ptr<attacks::Predictor> pred;
  if (job.arch == "deep") {
    deep = checkpoint::load_deep(job.checkpoint).params;
    pred = std::make_unique<attacks::DeepPredictor>(*deep);
  } else {
    two = checkpoint::load_two_layer(job.checkpoint);
    pred = std::make_unique<attacks::TwoLayerPredictor>(two->params, two->activation);
  }
  if (ds.dim() != (deep ? deep->input_dim() : two->params.w.cols()))
    throw ConfigError("params: dataset dimension does not match the checkpoint");

  const models::LossFn loss;
  std::string csv = csv_line({"attack", "kind", "steps", "step_size", "restarts", "step_decay", "surrogate_loss"});
  json rows = json::array();
  std::vector<attacks::AttackSpec> specs = job.attacks;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    specs[k].rng = RngStream(job.seed).fork(k);
    const double l = attacks::surrogate_loss(specs[k], *pred, ds, loss, workers);
    csv += csv_line({std::to_string(k), std::string(attacks::attack_kind_name(specs[k].kind)), std::to_string(specs[k].steps),
                     fmt(specs[k].step_size), std::to_string(specs[k].restarts), fmt(specs[k].step_decay), fmt(l)});
    json a = attack_json(specs[k]);
    a["surrogate_loss"] = l;
    rows.push_back(a);
  }
  out.write("attack_eval.csv", csv);

  json summary{{"command", "attack-eval"}, {"status", "ok"}, {"plain_loss", attacks::plain_loss(*pred, ds, loss)},
               {"attacks", rows}};
  RunOutcome res;
  res.metric_name = "max_surrogate_loss";
  for (const auto& r : rows) res.metric = std::max(res.metric, r["surrogate_loss"].get<double>());
  if (job.oracle_budget > 0) {
    const auto rep = attacks::robust_loss_report(*pred, ds, loss, job.oracle_budget, RngStream(job.seed).fork(0x0c1e),
                                                 workers, specs);
    std::string per = csv_line({"example", "y", "f", "plain_loss", "oracle_loss"});
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double f = pred->value(ds.examples[i].x);
      per += csv_line({std::to_string(i), std::to_string(ds.examples[i].y), fmt(f), fmt(loss.value(f, ds.examples[i].y)),
                       fmt(rep.per_example[i])});
    }
    out.write("per_example.csv", per);
    summary["oracle_loss"] = rep.loss;
    summary["oracle_budget"] = job.oracle_budget;
    res.metric_name = "oracle_loss";
    res.metric = rep.loss;
  }
  summary["exit_code"] = res.exit_code;
  out.write("summary.json", summary.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// ntk
// ---------------------------------------------------------------------------

struct NtkJob {
  ntk_rf::KernelSpec spec;
  long d = 5;
  std::vector<double> angles;
  std::optional<DatasetSpec> gram;
  std::uint64_t seed = 0;
};

ntk_rf::KernelSpec parse_kernel(Fields& f, std::size_t default_samples) {
  ntk_rf::KernelSpec spec;
  spec.activation = parse_activation(f, "relu");
  spec.init_law = parse_law(f);
  const long samples = f.integer("mc_samples", static_cast<long>(default_samples));
  if (samples < 1) throw ConfigError(f.where() + ".mc_samples: must be >= 1");
  spec.mc_samples = static_cast<std::size_t>(samples);
  spec.closed_form = f.boolean("closed_form", true);
  checked(f.where(), [&] { spec.validate(); });
  return spec;
}

NtkJob parse_ntk(Fields p, const fs::path& base, std::uint64_t seed) {
  NtkJob job;
  job.seed = seed;
  job.spec = parse_kernel(p, 1000000);
  job.d = p.integer("d", 5);
  if (job.d < 2) throw ConfigError("params.d: must be >= 2");
  job.angles = p.numbers("angles", std::vector<double>{0.0, M_PI / 6, M_PI / 3, M_PI / 2, 2 * M_PI / 3, 5 * M_PI / 6, M_PI});
  for (double a : job.angles)
    if (a < 0.0 || a > M_PI) throw ConfigError("params.angles: every angle must lie in [0, pi]");
  if (p.has("gram")) job.gram = parse_dataset(p.object("gram"), base, seed);
  p.done();
  return job;
}

RunOutcome exec_ntk(const NtkJob& job, Output& out, int workers) {
  RngStream rng(job.seed);
  const Vec x = numerics::sample_sphere(rng, job.d);
  Vec t = numerics::sample_sphere(rng, job.d);
  t = (t - t.dot(x) * x).normalized();

  std::string csv = csv_line({"theta", "mc_mean", "mc_std_error", "closed_form", "z"});
  double worst_z = 0.0;
  bool have_closed = false;
  for (std::size_t k = 0; k < job.angles.size(); ++k) {
    const double th = job.angles[k];
    const Vec y = std::cos(th) * x + std::sin(th) * t;
    const auto est = ntk_rf::ntk_mc(job.spec, rng.fork(k), x, y, workers);
    std::string closed = "none", z = "none";
    std::optional<double> exact;
    if (job.spec.activation.kind == models::ActivationKind::relu) exact = ntk_rf::relu_ntk(x, y);
    if (job.spec.activation.kind == models::ActivationKind::quad_relu) exact = ntk_rf::quad_relu_ntk(x, y);
    if (exact) {
      have_closed = true;
      closed = fmt(*exact);
      const double diff = std::abs(est.mean - *exact);
      const double zz = est.std_error > 0 ? diff / est.std_error : (diff == 0 ? 0.0 : INFINITY);
      worst_z = std::max(worst_z, zz);
      z = fmt(zz);
    }
    csv += csv_line({fmt(th), fmt(est.mean), fmt(est.std_error), closed, z});
  }
  out.write("ntk.csv", csv);

  json summary{{"command", "ntk"},
               {"status", "ok"},
               {"activation", std::string(job.spec.activation.name())},
               {"init_law", std::string(models::init_law_name(job.spec.init_law))},
               {"d", job.d},
               {"mc_samples", job.spec.mc_samples}};
  if (have_closed) summary["max_abs_z"] = worst_z;
  if (job.gram) {
    const auto ds = job.gram->load();
    const ntk_rf::Kernel kernel(job.spec, ds.dim(), rng.fork(0x6a));
    std::vector<Vec> xs;
    for (const auto& e : ds.examples) xs.push_back(e.x);
    const auto g = kernel.gram(xs, xs, workers);
    ntk_rf::write_gram_csv(out.dir / "gram.csv", g);
    out.note("gram.csv");
    summary["gram_size"] = xs.size();
  }
  RunOutcome res;
  res.metric_name = "max_abs_z";
  res.metric = worst_z;
  summary["exit_code"] = res.exit_code;
  out.write("summary.json", summary.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// rf
// ---------------------------------------------------------------------------

struct RfJob {
  ntk_rf::KernelSpec spec;
  // kernel section h = K(., x0) when set; otherwise a ridge fit on data
  std::optional<long> section_d;
  DatasetSpec data;
  ntk_rf::FitOptions fit;
  std::vector<long> widths;
  int draws = 8;
  long probes = 1000;
  std::uint64_t seed = 0;
};

RfJob parse_rf(Fields p, const fs::path& base, std::uint64_t seed) {
  RfJob job;
  job.seed = seed;
  Fields k = p.object_or_empty("kernel");
  job.spec = parse_kernel(k, 100000);
  k.done();
  Fields target = p.object("target");
  if (target.has("kernel_section") == target.has("fit"))
    throw ConfigError("params.target: give exactly one of kernel_section, fit");
  if (target.has("kernel_section")) {
    Fields s = target.object("kernel_section");
    job.section_d = s.integer("d", 3);
    if (*job.section_d < 1) throw ConfigError("params.target.kernel_section.d: must be >= 1");
    s.done();
  } else {
    Fields f = target.object("fit");
    job.data = parse_dataset(f.object("dataset"), base, seed);
    job.fit.cap_samples_per_point = static_cast<int>(f.integer("cap_samples_per_point", 0));
    job.fit.target_scale = f.number("target_scale", 1.0);
    job.fit.lambda = f.number("lambda", 1e-6);
    job.fit.hemisphere_lift = f.boolean("hemisphere_lift", false);
    if (job.fit.cap_samples_per_point < 0 || job.fit.lambda < 0.0)
      throw ConfigError("params.target.fit: cap_samples_per_point and lambda must be >= 0");
    f.done();
  }
  target.done();
  job.widths = p.integers("M", std::vector<long>{64, 256, 1024, 4096});
  if (job.widths.empty()) throw ConfigError("params.M: needs at least one width");
  for (long M : job.widths)
    if (M < 1) throw ConfigError("params.M: widths must be >= 1");
  job.draws = static_cast<int>(p.integer("draws", 8));
  job.probes = p.integer("probes", 1000);
  if (job.draws < 1 || job.probes < 1) throw ConfigError("params: draws and probes must be >= 1");
  p.done();
  return job;
}

RunOutcome exec_rf(const RfJob& job, Output& out, int workers) {
  RngStream rng(job.seed);
  ntk_rf::KernelFit fit;
  if (job.section_d) {
    const Vec x0 = numerics::sample_sphere(rng, *job.section_d);
    const ntk_rf::Kernel kernel(job.spec, *job.section_d, rng.fork(3));
    fit = ntk_rf::kernel_fit_anchors(kernel, {x0}, Vec::Constant(1, 1.0), 0.0);
    fit.coeffs(0) = 1.0;
  } else {
    auto opts = job.fit;
    opts.workers = workers;
    fit = ntk_rf::kernel_fit(job.spec, job.data.load(), opts, rng.fork(4));
  }

  std::string csv = csv_line({"M", "mean_sup_error", "max_coeff_ratio"});
  std::vector<double> lx, ly;
  double worst_ratio = 0.0;
  for (long M : job.widths) {
    double s = 0.0, ratio = 0.0;
    for (int r = 0; r < job.draws; ++r) {
      RngStream rr = rng.fork(77).fork(static_cast<std::uint64_t>(M)).fork(static_cast<std::uint64_t>(r));
      const auto model = ntk_rf::rf_construct(fit, rr, M);
      for (Eigen::Index i = 0; i < M; ++i) ratio = std::max(ratio, model.coeffs.row(i).norm() / model.coeff_bound);
      s += ntk_rf::rf_sup_error(model, fit, static_cast<std::size_t>(job.probes), workers);
    }
    worst_ratio = std::max(worst_ratio, ratio);
    csv += csv_line({std::to_string(M), fmt(s / job.draws), fmt(ratio)});
    lx.push_back(std::log(static_cast<double>(M)));
    ly.push_back(std::log(s / job.draws));
  }
  out.write("rf.csv", csv);

  json summary{{"command", "rf"}, {"status", "ok"}, {"max_coeff_ratio", worst_ratio}, {"fit_max_residual", fit.max_residual}};
  RunOutcome res;
  res.metric_name = "loglog_slope";
  if (lx.size() >= 2) {
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      num += (lx[i] - mx) * (ly[i] - my);
      den += (lx[i] - mx) * (lx[i] - mx);
    }
    res.metric = den > 0 ? num / den : 0.0;
    summary["loglog_slope"] = res.metric;
  }
  summary["exit_code"] = res.exit_code;
  out.write("summary.json", summary.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// capacity
// ---------------------------------------------------------------------------

struct GapJob {
  std::vector<int> n_list;
  std::vector<Eigen::Index> widths;
  int labelings = 20;
  int probes_per_ball = 20;
  training::TrainConfig base;
};

struct CapacityJob {
  int n = 4;
  long d = 2;
  double delta = 0.05;
  double epsilon = 0.0125;
  int probes_per_ball = 200;
  std::optional<GapJob> gap;
  std::uint64_t seed = 0;
};

CapacityJob parse_capacity(Fields p, std::uint64_t seed) {
  CapacityJob job;
  job.seed = seed;
  job.n = static_cast<int>(p.integer("n", 4));
  job.d = p.integer("d", 2);
  job.delta = p.number("delta", 0.05);
  job.epsilon = p.number("epsilon", job.delta / 4);
  job.probes_per_ball = static_cast<int>(p.integer("probes_per_ball", 200));
  if (job.probes_per_ball < 0) throw ConfigError("params.probes_per_ball: must be >= 0");
  checked("params", [&] { return capacity::build_grid(job.n, job.d, job.delta, job.epsilon).size(); });
  if (job.n / 2 * job.d > 20) throw ConfigError("params: more than 2^20 labelings");
  if (p.has("gap")) {
    Fields g = p.object("gap");
    GapJob gj;
    for (long n : g.integers("n_list")) gj.n_list.push_back(static_cast<int>(n));
    for (long m : g.integers("width_grid")) gj.widths.push_back(m);
    if (gj.n_list.empty() || gj.widths.empty()) throw ConfigError("params.gap: n_list and width_grid must be non-empty");
    gj.labelings = static_cast<int>(g.integer("labelings", 20));
    gj.probes_per_ball = static_cast<int>(g.integer("probes_per_ball", 20));
    gj.base.alpha = g.number("alpha", 5.0);
    gj.base.T = static_cast<int>(g.integer("T", 300));
    gj.base.attack = parse_attack(g.object_or_empty("attack"));
    gj.base.seed = seed;
    training::TwoLayerArch arch;
    arch.act = parse_activation(g, "softplus");
    gj.base.arch = arch;
    if (gj.labelings < 1) throw ConfigError("params.gap.labelings: must be >= 1");
    g.done();
    job.gap = gj;
  }
  p.done();
  return job;
}

RunOutcome exec_capacity(const CapacityJob& job, Output& out, int workers) {
  const auto grid = capacity::build_grid(job.n, job.d, job.delta, job.epsilon);
  const auto rows = capacity::exhaustive_ball_check(grid, job.probes_per_ball, workers);
  out.write("labelings.csv", capacity::labeling_csv(rows));
  std::size_t passed = 0;
  for (const auto& r : rows) passed += r.separated && r.shatter.pass;
  json summary{{"command", "capacity"},   {"status", "ok"},          {"n", job.n},
               {"d", job.d},              {"delta", job.delta},      {"epsilon", job.epsilon},
               {"labelings", rows.size()}, {"labelings_passed", passed}};
  if (job.gap) {
    const auto gap = capacity::capacity_gap_probe(job.gap->n_list, job.d, job.gap->widths, job.gap->labelings,
                                                  job.gap->base, job.gap->probes_per_ball, job.seed, job.delta);
    out.write("gap.csv", capacity::gap_csv(gap));
  }
  RunOutcome res;
  res.metric_name = "pass_rate";
  res.metric = rows.empty() ? 0.0 : static_cast<double>(passed) / rows.size();
  summary["pass_rate"] = res.metric;
  summary["exit_code"] = res.exit_code;
  out.write("summary.json", summary.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckJob {
  bool deep = true, two = true;
  long deep_m = 256, deep_d = 10, two_m = 64, two_d = 10;
  int H = 2, deep_cases = 50, two_cases = 50;
  double deep_h = 1e-6, two_h = 1e-5;
  double deep_threshold = 1e-5, two_threshold = 1e-7;
  models::Activation act{models::ActivationKind::softplus};
  std::uint64_t seed = 0;
};

GradcheckJob parse_gradcheck(Fields p, std::uint64_t seed) {
  GradcheckJob job;
  job.seed = seed;
  job.deep = p.has("deep") || !p.has("two_layer");
  job.two = p.has("two_layer") || !p.has("deep");
  if (job.deep) {
    Fields f = p.object_or_empty("deep");
    job.deep_m = f.integer("m", 256);
    job.deep_d = f.integer("d", 10);
    job.H = static_cast<int>(f.integer("H", 2));
    job.deep_cases = static_cast<int>(f.integer("cases", 50));
    job.deep_h = f.number("h", 1e-6);
    job.deep_threshold = f.number("threshold", 1e-5);
    f.done();
    if (job.deep_m < 1 || job.deep_d < 1 || job.H < 1 || job.deep_cases < 1 || job.deep_h <= 0)
      throw ConfigError("params.deep: m, d, H, cases and h must be positive");
  }
  if (job.two) {
    Fields f = p.object_or_empty("two_layer");
    job.two_m = f.integer("m", 64);
    job.two_d = f.integer("d", 10);
    job.act = parse_activation(f, "softplus");
    job.two_cases = static_cast<int>(f.integer("cases", 50));
    job.two_h = f.number("h", 1e-5);
    job.two_threshold = f.number("threshold", 1e-7);
    f.done();
    if (job.two_m < 2 || job.two_m % 2 || job.two_d < 1 || job.two_cases < 1 || job.two_h <= 0)
      throw ConfigError("params.two_layer: m must be even, d, cases and h positive");
  }
  p.done();
  return job;
}

RunOutcome exec_gradcheck(const GradcheckJob& job, Output& out) {
  std::string csv = csv_line({"arch", "case", "analytic", "numeric", "rel_error"});
  json summary{{"command", "gradcheck"}};
  bool ok = true;
  double worst = 0.0;
  if (job.two) {
    RngStream rng = RngStream(job.seed).fork(1);
    const auto r = training::gradcheck_two_layer(job.two_m, job.two_d, job.act, job.two_cases, rng, job.two_h);
    for (std::size_t i = 0; i < r.cases.size(); ++i)
      csv += csv_line({"two_layer", std::to_string(i), fmt(r.cases[i].analytic), fmt(r.cases[i].numeric),
                       fmt(r.cases[i].rel_error)});
    summary["two_layer"] = {{"max_rel_error", r.max_rel_error},
                            {"threshold", job.two_threshold},
                            {"coordinates", r.cases.size()},
                            {"activation", std::string(job.act.name())}};
    ok = ok && r.max_rel_error <= job.two_threshold;
    worst = std::max(worst, r.max_rel_error);
  }
  if (job.deep) {
    RngStream rng = RngStream(job.seed).fork(2);
    const auto r = training::gradcheck_deep(job.deep_m, job.deep_d, job.H, job.deep_cases, rng, job.deep_h);
    for (std::size_t i = 0; i < r.cases.size(); ++i)
      csv += csv_line({"deep", std::to_string(i), fmt(r.cases[i].analytic), fmt(r.cases[i].numeric),
                       fmt(r.cases[i].rel_error)});
    summary["deep"] = {{"max_rel_error", r.max_rel_error},
                       {"threshold", job.deep_threshold},
                       {"cases", r.cases.size()},
                       {"redrawn_at_kinks", r.skipped_kinks}};
    ok = ok && r.max_rel_error <= job.deep_threshold;
    worst = std::max(worst, r.max_rel_error);
  }
  out.write("gradcheck.csv", csv);
  RunOutcome res;
  res.metric_name = "max_rel_error";
  res.metric = worst;
  if (!ok) {
    res.exit_code = kExitNumerical;
    res.status = "failed";
    res.reason = "gradcheck: relative error above threshold";
  }
  summary["status"] = res.status;
  if (!ok) summary["reason"] = res.reason;
  summary["max_rel_error"] = worst;
  summary["exit_code"] = res.exit_code;
  out.write("summary.json", summary.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

struct DiagnoseJob {
  std::vector<long> widths;
  long d = 10;
  int H = 2;
  int trials = 200;
  double R = 5.0;
  double two_layer_radius = 1.0;
  int samples = 51;
  std::uint64_t seed = 0;
};

DiagnoseJob parse_diagnose(Fields p, std::uint64_t seed) {
  DiagnoseJob job;
  job.seed = seed;
  job.widths = p.integers("m", std::vector<long>{256, 1024});
  job.d = p.integer("d", 10);
  job.H = static_cast<int>(p.integer("H", 2));
  job.trials = static_cast<int>(p.integer("trials", 200));
  job.R = p.number("R", 5.0);
  job.two_layer_radius = p.number("two_layer_radius", 1.0);
  job.samples = static_cast<int>(p.integer("samples", 51));
  p.done();
  if (job.widths.empty()) throw ConfigError("params.m: needs at least one width");
  for (long m : job.widths)
    if (m < 2 || m % 2) throw ConfigError("params.m: widths must be even and >= 2");
  if (job.d < 1 || job.H < 1 || job.trials < 1 || job.samples < 1 || job.R <= 0 || job.two_layer_radius <= 0)
    throw ConfigError("params: d, H, trials, samples, R and two_layer_radius must be positive");
  return job;
}

RunOutcome exec_diagnose(const DiagnoseJob& job, Output& out, int workers) {
  std::string lemma = csv_line({"m", "H", "output_norm_ratio", "hidden_norm_rate", "hidden_norm_min", "hidden_norm_max",
                                "backward_ratio_min", "backward_ratio_max", "layer_grad_ratio_min",
                                "layer_grad_ratio_max", "ok"});
  std::string lin = csv_line({"m", "two_layer_max_ratio", "deep_median_residual"});
  const models::Activation act{models::ActivationKind::softplus};
  bool all_ok = true;
  RngStream root(job.seed);
  for (long m : job.widths) {
    RngStream rng = root.fork(static_cast<std::uint64_t>(m));
    const auto init = models::init_deep(rng, m, job.d, job.H);
    RngStream lr = rng.fork(1);
    const auto rep = training::lemma_diagnostics(init, job.trials, lr, workers);
    all_ok = all_ok && rep.ok();
    lemma += csv_line({std::to_string(m), std::to_string(job.H), fmt(rep.output_norm_ratio), fmt(rep.hidden_norm_rate),
                       fmt(rep.hidden_norm_min), fmt(rep.hidden_norm_max), fmt(rep.backward_ratio_min),
                       fmt(rep.backward_ratio_max), fmt(rep.layer_grad_ratio_min), fmt(rep.layer_grad_ratio_max),
                       rep.ok() ? "1" : "0"});

    const auto p0 = models::init_two_layer(rng, m, job.d, models::InitLaw::gaussian_identity);
    double ratio = 0.0;
    std::vector<double> res;
    for (int k = 0; k < job.samples; ++k) {
      const auto p1 = training::displace_two_layer(p0, rng, job.two_layer_radius);
      const double r = training::near_linearity_residual(p0, p1, act, numerics::sample_sphere(rng, job.d));
      ratio = std::max(ratio, r * std::sqrt(static_cast<double>(m)) / (job.two_layer_radius * job.two_layer_radius));
      const auto d1 = training::displace_deep(init, rng, job.R / std::sqrt(static_cast<double>(m)));
      res.push_back(training::near_linearity_residual(init, d1, numerics::sample_sphere(rng, job.d)));
    }
    std::sort(res.begin(), res.end());
    const std::size_t n = res.size();
    const double med = n % 2 ? res[n / 2] : 0.5 * (res[n / 2 - 1] + res[n / 2]);
    lin += csv_line({std::to_string(m), fmt(ratio), fmt(med)});
  }
  out.write("lemma.csv", lemma);
  out.write("near_linearity.csv", lin);
  RunOutcome res;
  res.metric_name = "lemma_ok";
  res.metric = all_ok ? 1.0 : 0.0;
  json summary{{"command", "diagnose"}, {"status", "ok"}, {"lemma_ok", all_ok}, {"exit_code", res.exit_code}};
  out.write("summary.json", summary.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------------------

using Job = std::variant<TrainJob, AttackEvalJob, NtkJob, RfJob, CapacityJob, GradcheckJob, DiagnoseJob>;

struct Parsed {
  std::string command;
  std::uint64_t seed = 0;
  Job job;
};

Parsed parse(const json& config, const fs::path& base) {
  Fields top(config, "config");
  const long version = top.integer("schema_version");
  if (version != kSchemaVersion)
    throw ConfigError("config.schema_version: unsupported version " + std::to_string(version));
  Parsed p;
  p.command = top.text("command");
  const long seed = top.integer("seed", 0);
  if (seed < 0) throw ConfigError("config.seed: must be >= 0");
  p.seed = static_cast<std::uint64_t>(seed);
  if (top.has("out")) top.text("out");  // consumed by the front end
  if (top.has("grid")) throw ConfigError("config.grid: grid axes need the sweep command");
  Fields params = top.object_or_empty("params");
  top.done();
  if (p.command == "train") {
    p.job = parse_train(params, base, p.seed);
  } else if (p.command == "attack-eval") {
    p.job = parse_attack_eval(params, base, p.seed);
  } else if (p.command == "ntk") {
    p.job = parse_ntk(params, base, p.seed);
  } else if (p.command == "rf") {
    p.job = parse_rf(params, base, p.seed);
  } else if (p.command == "capacity") {
    p.job = parse_capacity(params, p.seed);
  } else if (p.command == "gradcheck") {
    p.job = parse_gradcheck(params, p.seed);
  } else if (p.command == "diagnose") {
    p.job = parse_diagnose(params, p.seed);
  } else {
    throw ConfigError("config.command: unknown command " + p.command);
  }
  return p;
}

RunOutcome execute(Parsed& p, Output& out, int workers) {
  return std::visit(
      [&](auto& job) -> RunOutcome {
        using J = std::decay_t<decltype(job)>;
        if constexpr (std::is_same_v<J, TrainJob>) return exec_train(job, out, workers);
        if constexpr (std::is_same_v<J, AttackEvalJob>) return exec_attack_eval(job, out, workers);
        if constexpr (std::is_same_v<J, NtkJob>) return exec_ntk(job, out, workers);
        if constexpr (std::is_same_v<J, RfJob>) return exec_rf(job, out, workers);
        if constexpr (std::is_same_v<J, CapacityJob>) return exec_capacity(job, out, workers);
        if constexpr (std::is_same_v<J, GradcheckJob>) return exec_gradcheck(job, out);
        if constexpr (std::is_same_v<J, DiagnoseJob>) return exec_diagnose(job, out, workers);
      },
      p.job);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_error_summary(const fs::path& dir, const RunOutcome& res) {
  json j{{"status", res.status}, {"exit_code", res.exit_code}, {"reason", res.reason}};
  std::ofstream(dir / "summary.json", std::ios::binary) << j.dump(2) << "\n";
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr))
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

RunOutcome run_experiment(const json& config, const fs::path& base_dir, const fs::path& out_dir, int workers) {
  RunOutcome res;
  try {
    fs::create_directories(out_dir);
  } catch (const std::exception& e) {
    res.exit_code = kExitValidation;
    res.status = "error";
    res.reason = std::string("output: ") + e.what();
    return res;
  }
  Parsed parsed;
  try {
    if (workers < 1) throw ConfigError("workers: must be >= 1");
    parsed = parse(config, base_dir);
  } catch (const std::exception& e) {
    res.exit_code = kExitValidation;
    res.status = "error";
    res.reason = std::string("validation: ") + e.what();
    write_error_summary(out_dir, res);
    return res;
  }

  Output out{out_dir, {}};
  try {
    res = execute(parsed, out, workers);
  } catch (const ConfigError& e) {
    res = {kExitValidation, "error", std::string("validation: ") + e.what(), "", 0.0};
  } catch (const std::invalid_argument& e) {
    res = {kExitValidation, "error", std::string("validation: ") + e.what(), "", 0.0};
  } catch (const std::exception& e) {
    res = {kExitInternal, "error", std::string("internal: ") + e.what(), "", 0.0};
  }
  if (res.status == "error") {
    write_error_summary(out_dir, res);
    return res;
  }

  json files = json::array();
  for (const auto& name : out.files)
    files.push_back({{"file", name}, {"sha256", sha256_hex(read_file(out_dir / name))}});
  const json manifest{{"schema_version", kSchemaVersion},
                      {"command", parsed.command},
                      {"seed", parsed.seed},
                      {"config_sha256", sha256_hex(config.dump())},
                      {"status", res.status},
                      {"exit_code", res.exit_code},
                      {"artifacts", files}};
  std::ofstream(out_dir / "manifest.json", std::ios::binary) << manifest.dump(2) << "\n";
  return res;
}

}  // namespace advlab::tools
