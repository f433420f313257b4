#include <fstream>
#include <stdexcept>
#include <string>

#include "advlab/attacks.hpp"
#include "json.hpp"

namespace advlab::attacks {

void write_dataset_jsonl(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::json header = {{"d", ds.dim()}, {"delta", ds.delta}};
  if (ds.geometry == Geometry::euclidean_ball) header["geometry"] = "euclidean_ball";
  out << header.dump() << '\n';
  for (const auto& e : ds.examples) {
    nlohmann::json rec;
    rec["x"] = std::vector<double>(e.x.data(), e.x.data() + e.x.size());
    rec["y"] = e.y;
    out << rec.dump() << '\n';
  }
}

Dataset read_dataset_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset " + path.string());
  std::string line;
  Dataset ds;
  bool have_header = false;
  Eigen::Index d = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line);
    if (!have_header) {
      if (!j.contains("d") || !j.contains("delta")) throw std::runtime_error("dataset header must hold d and delta");
      d = j.at("d").get<Eigen::Index>();
      ds.delta = j.at("delta").get<double>();
      if (d < 1 || ds.delta < 0.0) throw std::runtime_error("dataset header has invalid d or delta");
      if (j.value("geometry", "sphere_cap") == "euclidean_ball") ds.geometry = Geometry::euclidean_ball;
      have_header = true;
      continue;
    }
    const auto xs = j.at("x").get<std::vector<double>>();
    const int y = j.at("y").get<int>();
    if (static_cast<Eigen::Index>(xs.size()) != d) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": dimension mismatch");
    }
    if (y != 1 && y != -1) throw std::runtime_error("dataset line " + std::to_string(lineno) + ": label must be +-1");
    Example e;
    e.x = Eigen::Map<const Vec>(xs.data(), d);
    e.y = y;
    if (ds.geometry == Geometry::sphere_cap && std::abs(e.x.norm() - 1.0) > 1e-8) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": point is not on the unit sphere");
    }
    ds.examples.push_back(std::move(e));
  }
  if (!have_header) throw std::runtime_error("dataset file is empty");
  return ds;
}

}  // namespace advlab::attacks
