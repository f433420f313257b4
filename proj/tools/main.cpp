// advlab: config-driven experiment runner.
//
//   advlab run   --config exp.json [--out DIR] [--seed N] [--workers N]
//   advlab sweep --config grid.json [--out DIR] [--seed N] [--workers N]
//
// Output directory: --out, else $ADVLAB_OUT_DIR, else the config's "out",
// else ./advlab_out.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "advlab/parallel.hpp"
#include "commands.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace advlab::tools;

namespace {

struct Options {
  std::string config;
  std::string out;
  long seed = -1;
  int workers = 1;
};

struct Loaded {
  json config;
  fs::path base;
  fs::path out;
};

int fail_early(const fs::path& out, const std::string& reason) {
  std::cerr << "advlab: " << reason << "\n";
  std::error_code ec;
  fs::create_directories(out, ec);
  if (!ec) {
    json j{{"status", "error"}, {"exit_code", kExitValidation}, {"reason", reason}};
    std::ofstream(out / "summary.json", std::ios::binary) << j.dump(2) << "\n";
  }
  return kExitValidation;
}

fs::path output_dir(const Options& opt, const json& config) {
  if (!opt.out.empty()) return opt.out;
  if (const char* env = std::getenv("ADVLAB_OUT_DIR"); env && *env) return env;
  if (config.is_object() && config.contains("out") && config["out"].is_string()) return config["out"].get<std::string>();
  return "advlab_out";
}

// Reads the config and applies --seed. Returns an exit code on failure.
std::optional<int> load(const Options& opt, Loaded& l) {
  std::ifstream in(opt.config, std::ios::binary);
  if (!in) {
    l.out = output_dir(opt, json());
    return fail_early(l.out, "validation: cannot read config " + opt.config);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    l.config = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    l.out = output_dir(opt, json());
    return fail_early(l.out, std::string("validation: config is not valid JSON: ") + e.what());
  }
  l.out = output_dir(opt, l.config);
  if (!l.config.is_object()) return fail_early(l.out, "validation: config must be a JSON object");
  if (opt.seed >= 0) l.config["seed"] = opt.seed;
  l.base = fs::absolute(opt.config).parent_path();
  return std::nullopt;
}

int report(const RunOutcome& r) {
  if (r.exit_code != kExitOk) std::cerr << "advlab: " << r.reason << "\n";
  return r.exit_code;
}

int cmd_run(const Options& opt) {
  Loaded l;
  if (auto code = load(opt, l)) return *code;
  return report(run_experiment(l.config, l.base, l.out, opt.workers));
}

// Sets a dotted path inside params, creating objects on the way.
void set_path(json& params, const std::string& path, const json& value) {
  json* node = &params;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("empty segment in grid axis " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    if (!node->is_object()) throw std::invalid_argument("grid axis " + path + " crosses a non-object");
    start = dot + 1;
  }
}

std::string cell_value(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

int cmd_sweep(const Options& opt) {
  Loaded l;
  if (auto code = load(opt, l)) return *code;
  if (!l.config.contains("grid") || !l.config["grid"].is_object())
    return fail_early(l.out, "validation: sweep needs a grid object");
  const json grid = l.config["grid"];
  json base = l.config;
  base.erase("grid");
  base.erase("out");
  if (!base.contains("params")) base["params"] = json::object();

  std::vector<std::string> axes;
  std::vector<std::vector<json>> values;
  std::size_t cells = 1;
  for (const auto& [axis, list] : grid.items()) {
    if (!list.is_array() || list.empty()) return fail_early(l.out, "validation: grid axis " + axis + " is empty");
    axes.push_back(axis);
    values.emplace_back(list.begin(), list.end());
    cells *= list.size();
  }
  if (axes.empty()) return fail_early(l.out, "validation: grid has no axes");

  // Row-major over the axes in key order; the last axis varies fastest.
  std::vector<json> configs(cells, base);
  std::vector<std::vector<std::string>> keys(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t rest = c;
    std::vector<std::size_t> idx(axes.size());
    for (std::size_t a = axes.size(); a-- > 0;) {
      idx[a] = rest % values[a].size();
      rest /= values[a].size();
    }
    for (std::size_t a = 0; a < axes.size(); ++a) {
      try {
        set_path(configs[c]["params"], axes[a], values[a][idx[a]]);
      } catch (const std::exception& e) {
        return fail_early(l.out, std::string("validation: ") + e.what());
      }
      keys[c].push_back(cell_value(values[a][idx[a]]));
    }
  }

  std::error_code ec;
  fs::create_directories(l.out, ec);
  if (ec) return fail_early(l.out, "validation: cannot create " + l.out.string());
  std::vector<RunOutcome> results(cells);
  char name[32];
  auto cell_dir = [&](std::size_t c) {
    std::snprintf(name, sizeof name, "cell_%03zu", c);
    return l.out / name;
  };
  std::vector<fs::path> dirs;
  for (std::size_t c = 0; c < cells; ++c) dirs.push_back(cell_dir(c));
  advlab::parallel_for(cells, opt.workers,
                       [&](std::size_t c) { results[c] = run_experiment(configs[c], l.base, dirs[c], 1); });

  std::string csv = "cell";
  for (const auto& a : axes) csv += "," + a;
  csv += ",status,exit_code,metric,value\n";
  int failed = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    const auto& r = results[c];
    csv += dirs[c].filename().string();
    for (const auto& k : keys[c]) csv += "," + k;
    char tail[128];
    std::snprintf(tail, sizeof tail, ",%s,%d,%s,%.17g\n", r.status.c_str(), r.exit_code,
                  r.metric_name.empty() ? "none" : r.metric_name.c_str(), r.metric);
    csv += tail;
    if (r.exit_code != kExitOk) {
      ++failed;
      std::cerr << "advlab: " << dirs[c].filename().string() << ": " << r.reason << "\n";
    }
  }
  std::ofstream(l.out / "aggregate.csv", std::ios::binary) << csv;
  return failed ? kExitSweepPartial : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"advlab experiment runner"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "experiment config (JSON)")->required();
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--seed", opt.seed, "global seed, overrides the config")->check(CLI::NonNegativeNumber);
    sub->add_option("--workers", opt.workers, "worker threads")->check(CLI::PositiveNumber);
  };
  auto* run = app.add_subcommand("run", "run one experiment");
  auto* sweep = app.add_subcommand("sweep", "run every cell of a grid");
  add_common(run);
  add_common(sweep);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }
  return run->parsed() ? cmd_run(opt) : cmd_sweep(opt);
}
