#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "advlab/training.hpp"
#include "json.hpp"

namespace advlab::training {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool is_deep(const TrainRun& run) { return std::holds_alternative<DeepNetParams>(run.init); }

nlohmann::json arch_json(const TrainConfig& cfg) {
  if (const auto* a = std::get_if<DeepArch>(&cfg.arch)) {
    return {{"kind", "deep"},
            {"m", a->m},
            {"d", a->d},
            {"H", a->H},
            {"input_layer", a->input_layer == models::InputLayer::relu ? "relu" : "linear"}};
  }
  const auto& b = std::get<TwoLayerArch>(cfg.arch);
  return {{"kind", "two_layer"},
          {"m", b.m},
          {"d", b.d},
          {"activation", std::string(b.act.name())},
          {"init_law", std::string(models::init_law_name(b.law))}};
}

}  // namespace

std::string_view run_status_name(RunStatus s) { return s == RunStatus::ok ? "ok" : "diverged"; }

std::string train_csv(const TrainRun& run) {
  std::ostringstream out;
  const bool deep = is_deep(run);
  const std::size_t layers = run.records.empty() ? 0 : run.records.front().excursion.size();
  out << "t,L_A,L_plain";
  for (std::size_t h = 1; h <= layers; ++h) out << ",excursion_" << h;
  out << ",proj_active";
  if (!deep) out << ",exceeds_3R";
  out << '\n';
  for (const auto& r : run.records) {
    out << r.t << ',' << fmt(r.surrogate) << ',' << fmt(r.plain);
    for (double e : r.excursion) out << ',' << fmt(e);
    out << ',' << (r.proj_active ? 1 : 0);
    if (!deep) out << ',' << (r.exceeds_3r ? 1 : 0);
    out << '\n';
  }
  return out.str();
}

void write_train_csv(const std::filesystem::path& path, const TrainRun& run) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << train_csv(run);
}

std::string train_summary_json(const TrainConfig& cfg, const TrainRun& run) {
  nlohmann::json j;
  j["status"] = std::string(run_status_name(run.status));
  if (!run.message.empty()) j["reason"] = run.message;
  j["steps_logged"] = run.records.size();
  j["argmin_step"] = run.argmin;
  j["min_surrogate_loss"] = std::isfinite(run.min_surrogate) ? nlohmann::json(run.min_surrogate) : nlohmann::json();
  if (!run.records.empty()) {
    const auto& last = run.records.back();
    j["final_surrogate_loss"] = last.surrogate;
    j["final_plain_loss"] = last.plain;
    j["final_excursion"] = last.excursion;
    double max_exc = 0.0;
    int proj_steps = 0;
    for (const auto& r : run.records) {
      for (double e : r.excursion) max_exc = std::max(max_exc, e);
      proj_steps += r.proj_active ? 1 : 0;
    }
    j["max_excursion"] = max_exc;
    j["projection_active_steps"] = proj_steps;
  }
  j["config"] = {{"alpha", cfg.alpha},
                 {"T", cfg.T},
                 {"R", cfg.R},
                 {"seed", cfg.seed},
                 {"project", cfg.project},
                 {"arch", arch_json(cfg)},
                 {"attack",
                  {{"kind", std::string(attacks::attack_kind_name(cfg.attack.kind))},
                   {"steps", cfg.attack.steps},
                   {"step_size", cfg.attack.step_size},
                   {"restarts", cfg.attack.restarts},
                   {"step_decay", cfg.attack.step_decay}}}};
  if (cfg.lift) j["config"]["lift"] = {{"scale", cfg.lift->scale}};
  return j.dump(2);
}

}  // namespace advlab::training
