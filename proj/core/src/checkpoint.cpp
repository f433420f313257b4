#include "advlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace advlab::checkpoint {
namespace {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

constexpr char kMagic[8] = {'A', 'D', 'V', 'L', 'A', 'B', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated tensor file");
  return v;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

models::Mat vec_as_column(const numerics::Vec& v) { return v; }

}  // namespace

std::filesystem::path bin_path(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".bin";
  return p;
}

std::filesystem::path json_path(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".json";
  return p;
}

void write_tensors(const std::filesystem::path& path, const std::vector<Mat>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Mat& t : tensors) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) put<double>(out, t(i, j));
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<Mat> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("not a tensor file: " + path.string());
  if (get<std::uint32_t>(in) != kVersion) throw std::runtime_error("unsupported tensor file version");
  const auto count = get<std::uint32_t>(in);
  std::vector<Mat> tensors;
  tensors.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    Mat t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = get<double>(in);
    }
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void save(const std::filesystem::path& stem, const DeepCheckpoint& ck) {
  const auto& p = ck.params;
  std::vector<Mat> tensors;
  tensors.push_back(p.input);
  for (const Mat& w : p.layers) tensors.push_back(w);
  tensors.push_back(vec_as_column(p.output));
  write_tensors(bin_path(stem), tensors);
  nlohmann::json meta = {
      {"kind", "deep"},
      {"m", p.width()},
      {"d", p.input_dim()},
      {"H", p.depth()},
      {"activation", "relu"},
      {"input_layer", p.input_layer == models::InputLayer::relu ? "relu" : "linear"},
      {"seed", ck.seed},
  };
  write_json_file(json_path(stem), meta);
}

void save(const std::filesystem::path& stem, const TwoLayerCheckpoint& ck) {
  const auto& p = ck.params;
  write_tensors(bin_path(stem), {p.w, p.wbar, vec_as_column(p.signs)});
  nlohmann::json meta = {
      {"kind", "two_layer"},
      {"m", p.width()},
      {"d", p.input_dim()},
      {"H", 1},
      {"activation", std::string(ck.activation.name())},
      {"init_law", std::string(models::init_law_name(p.law))},
      {"seed", ck.seed},
  };
  write_json_file(json_path(stem), meta);
}

DeepCheckpoint load_deep(const std::filesystem::path& stem) {
  const auto meta = read_json_file(json_path(stem));
  if (meta.at("kind") != "deep") throw std::runtime_error("checkpoint is not a deep net");
  auto tensors = read_tensors(bin_path(stem));
  const int H = meta.at("H").get<int>();
  if (tensors.size() != static_cast<std::size_t>(H) + 2) throw std::runtime_error("deep checkpoint tensor count mismatch");
  DeepCheckpoint ck;
  ck.seed = meta.at("seed").get<std::uint64_t>();
  ck.params.input_layer = meta.value("input_layer", "relu") == "relu" ? models::InputLayer::relu : models::InputLayer::linear;
  ck.params.input = std::move(tensors.front());
  for (int h = 1; h <= H; ++h) ck.params.layers.push_back(std::move(tensors[static_cast<std::size_t>(h)]));
  ck.params.output = tensors.back().col(0);
  const auto m = meta.at("m").get<Eigen::Index>();
  const auto d = meta.at("d").get<Eigen::Index>();
  if (ck.params.width() != m || ck.params.input_dim() != d || ck.params.output.size() != m) {
    throw std::runtime_error("deep checkpoint shape mismatch");
  }
  for (const auto& w : ck.params.layers) {
    if (w.rows() != m || w.cols() != m) throw std::runtime_error("deep checkpoint layer shape mismatch");
  }
  return ck;
}

TwoLayerCheckpoint load_two_layer(const std::filesystem::path& stem) {
  const auto meta = read_json_file(json_path(stem));
  if (meta.at("kind") != "two_layer") throw std::runtime_error("checkpoint is not a two-layer net");
  auto tensors = read_tensors(bin_path(stem));
  if (tensors.size() != 3) throw std::runtime_error("two-layer checkpoint tensor count mismatch");
  TwoLayerCheckpoint ck;
  ck.seed = meta.at("seed").get<std::uint64_t>();
  ck.activation = models::Activation::parse(meta.at("activation").get<std::string>());
  ck.params.law = models::parse_init_law(meta.at("init_law").get<std::string>());
  ck.params.w = std::move(tensors[0]);
  ck.params.wbar = std::move(tensors[1]);
  ck.params.signs = tensors[2].col(0);
  if (ck.params.width() != meta.at("m").get<Eigen::Index>() || ck.params.input_dim() != meta.at("d").get<Eigen::Index>() ||
      ck.params.wbar.rows() != ck.params.w.rows() || ck.params.signs.size() != ck.params.w.rows()) {
    throw std::runtime_error("two-layer checkpoint shape mismatch");
  }
  return ck;
}

}  // namespace advlab::checkpoint
