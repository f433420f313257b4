#include <filesystem>
#include <fstream>

#include "advlab/checkpoint.hpp"
#include "doctest.h"

using namespace advlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "advlab_test_checkpoint" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("tensor files round-trip bit for bit") {
  const fs::path dir = scratch_dir("tensors");
  numerics::RngStream rng(1);
  std::vector<numerics::Mat> ts = {numerics::gaussian_mat(rng, 3, 5, 1.0), numerics::Mat(0, 2),
                                   numerics::Mat::Constant(1, 1, -0.0)};
  checkpoint::write_tensors(dir / "t.bin", ts);
  const auto back = checkpoint::read_tensors(dir / "t.bin");
  REQUIRE(back.size() == 3);
  CHECK(back[0] == ts[0]);
  CHECK(back[1].rows() == 0);
  CHECK(back[1].cols() == 2);
  // header 8 + 4 + 4, per tensor 16 + 8 * entries
  CHECK(fs::file_size(dir / "t.bin") == 16 + 3 * 16 + 8 * (15 + 0 + 1));
}

TEST_CASE("row-major layout on disk") {
  const fs::path dir = scratch_dir("layout");
  numerics::Mat m(2, 2);
  m << 1.0, 2.0, 3.0, 4.0;
  checkpoint::write_tensors(dir / "m.bin", {m});
  std::ifstream in(dir / "m.bin", std::ios::binary);
  in.seekg(16 + 16);
  double vals[4];
  in.read(reinterpret_cast<char*>(vals), sizeof(vals));
  CHECK(vals[0] == 1.0);
  CHECK(vals[1] == 2.0);
  CHECK(vals[2] == 3.0);
}

TEST_CASE("corrupt tensor files are rejected") {
  const fs::path dir = scratch_dir("corrupt");
  {
    std::ofstream(dir / "bad.bin") << "NOTATENSORFILE";
  }
  CHECK_THROWS_AS(checkpoint::read_tensors(dir / "bad.bin"), std::runtime_error);
  checkpoint::write_tensors(dir / "ok.bin", {numerics::Mat::Ones(4, 4)});
  fs::resize_file(dir / "ok.bin", fs::file_size(dir / "ok.bin") - 8);
  CHECK_THROWS_AS(checkpoint::read_tensors(dir / "ok.bin"), std::runtime_error);
  CHECK_THROWS(checkpoint::read_tensors(dir / "missing.bin"));
}

TEST_CASE("deep checkpoints round-trip") {
  const fs::path dir = scratch_dir("deep");
  numerics::RngStream rng(3);
  checkpoint::DeepCheckpoint ck{models::init_deep(rng, 16, 4, 3, models::InputLayer::linear), 99};
  checkpoint::save(dir / "net", ck);
  CHECK(fs::exists(dir / "net.bin"));
  CHECK(fs::exists(dir / "net.json"));
  const auto back = checkpoint::load_deep(dir / "net");
  CHECK(back.seed == 99);
  CHECK(back.params.input == ck.params.input);
  CHECK(back.params.output == ck.params.output);
  REQUIRE(back.params.depth() == 3);
  for (int h = 0; h < 3; ++h) CHECK(back.params.layers[h] == ck.params.layers[h]);
  CHECK(back.params.input_layer == models::InputLayer::linear);
  CHECK_THROWS(checkpoint::load_two_layer(dir / "net"));
}

TEST_CASE("two-layer checkpoints round-trip") {
  const fs::path dir = scratch_dir("two");
  numerics::RngStream rng(4);
  checkpoint::TwoLayerCheckpoint ck{models::init_two_layer(rng, 10, 3, models::InitLaw::sphere_sqrt_d),
                                    {models::ActivationKind::quad_relu}, 5};
  ck.params.w(0, 0) = 1.25;
  checkpoint::save(dir / "net", ck);
  const auto back = checkpoint::load_two_layer(dir / "net");
  CHECK(back.params.w == ck.params.w);
  CHECK(back.params.wbar == ck.params.wbar);
  CHECK(back.params.signs == ck.params.signs);
  CHECK(back.params.law == models::InitLaw::sphere_sqrt_d);
  CHECK(back.activation.kind == models::ActivationKind::quad_relu);
  CHECK_THROWS(checkpoint::load_deep(dir / "net"));
}
