#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "simulstream/checkpoint.hpp"
#include "simulstream/rng.hpp"

using namespace simulstream;
namespace fs = std::filesystem;

namespace {
struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ckpt_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};
}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir tmp;
  Rng rng(3);
  std::vector<Parameter> params;
  params.push_back({"a.weight", Tensor::from({3, 4}, [&] {
                      std::vector<double> v(12);
                      for (double& x : v) x = rng.next_normal();
                      return v;
                    }(), true)});
  params.push_back({"b.bias", Tensor::from({4}, {1e-300, -0.0, 3.25, 7.0}, true)});

  CheckpointExtra extra;
  extra.step = 42;
  extra.model_config_json = R"({"width":64})";
  save_checkpoint(tmp.file("m.json"), params, extra);

  auto loaded = load_checkpoint(tmp.file("m.json"));
  REQUIRE(loaded.params.size() == 2);
  CHECK(loaded.extra.step == 42);
  CHECK(loaded.params[0].name == "a.weight");
  CHECK(loaded.params[1].name == "b.bias");
  for (size_t i = 0; i < 2; ++i) {
    auto want = params[i].tensor.values();
    auto got = loaded.params[i].tensor.values();
    REQUIRE(want.size() == got.size());
    for (size_t j = 0; j < want.size(); ++j) {
      CHECK(std::memcmp(&want[j], &got[j], sizeof(double)) == 0);
    }
  }
}

TEST_CASE("checkpoint with optimizer state resumes the step counter") {
  TempDir tmp;
  std::vector<Parameter> params;
  params.push_back({"w", Tensor::from({2}, {0.5, -0.5}, true)});
  CheckpointExtra extra;
  extra.step = 7;
  extra.has_optimizer = true;
  extra.adam_m = {{0.1, 0.2}};
  extra.adam_v = {{0.01, 0.02}};
  extra.adam.warmup_steps = 123;
  save_checkpoint(tmp.file("m.json"), params, extra);

  auto loaded = load_checkpoint(tmp.file("m.json"));
  REQUIRE(loaded.extra.has_optimizer);
  CHECK(loaded.extra.adam.warmup_steps == 123);
  CHECK(loaded.extra.adam_m[0] == std::vector<double>{0.1, 0.2});
  CHECK(loaded.extra.adam_v[0] == std::vector<double>{0.01, 0.02});
  AdamOptimizer opt(loaded.extra.adam);
  opt.restore(loaded.extra.step, loaded.extra.adam_m, loaded.extra.adam_v);
  CHECK(opt.step_count() == 7);
}

TEST_CASE("checkpoint rejects a wrong format tag") {
  TempDir tmp;
  {
    std::ofstream out(tmp.file("m.json"));
    out << R"({"format":"not-a-checkpoint","dtype":"float64","params":[]})";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp.file("m.json")), doctest::Contains("format"),
                       std::runtime_error);
}

TEST_CASE("checkpoint reports a truncated payload") {
  TempDir tmp;
  std::vector<Parameter> params;
  params.push_back({"w", Tensor::from({8}, std::vector<double>(8, 1.0), true)});
  save_checkpoint(tmp.file("m.json"), params, {});
  fs::resize_file(tmp.file("m.bin"), 16);
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp.file("m.json")), doctest::Contains("truncated"),
                       std::runtime_error);
}
