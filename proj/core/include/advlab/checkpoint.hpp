#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "advlab/models.hpp"

namespace advlab::checkpoint {

using numerics::Mat;

// Binary tensor record:
//   "ADVLABT1" (8 bytes), u32 version = 1, u32 tensor count,
//   per tensor: u64 rows, u64 cols, rows*cols little-endian f64 in row-major order.
// Every checkpoint is a pair <stem>.bin + <stem>.json (metadata sidecar).

void write_tensors(const std::filesystem::path& path, const std::vector<Mat>& tensors);
std::vector<Mat> read_tensors(const std::filesystem::path& path);

struct DeepCheckpoint {
  models::DeepNetParams params;
  std::uint64_t seed = 0;
};

struct TwoLayerCheckpoint {
  models::TwoLayerParams params;
  models::Activation activation;
  std::uint64_t seed = 0;
};

void save(const std::filesystem::path& stem, const DeepCheckpoint& ck);
void save(const std::filesystem::path& stem, const TwoLayerCheckpoint& ck);
DeepCheckpoint load_deep(const std::filesystem::path& stem);
TwoLayerCheckpoint load_two_layer(const std::filesystem::path& stem);

std::filesystem::path bin_path(const std::filesystem::path& stem);
std::filesystem::path json_path(const std::filesystem::path& stem);

}  // namespace advlab::checkpoint
