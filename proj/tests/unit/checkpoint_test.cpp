#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include "cxr/checkpoint.hpp"
#include "cxr/errors.hpp"
#include "cxr/rng.hpp"

using namespace cxr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("cxr_ckpt_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

ModelSpec small_spec() {
  ModelSpec spec;
  spec.input_h = spec.input_w = 16;
  spec.num_blocks = 2;
  spec.layers_per_block = 2;
  spec.growth = 4;
  return spec;
}

// A model whose parameters are not at their init values, so round trips are
// tested on non-trivial content.
Model trained_ish_model(const ModelSpec& spec, std::uint64_t seed) {
  Model model(spec, seed);
  Rng rng(derive_seed(seed, "perturb"));
  for (ParamTensor* p : model.params()) {
    for (auto& v : p->value) v += 0.01 * rng.normal();
  }
  return model;
}

DatasetStats some_stats() {
  DatasetStats stats;
  stats.per[0] = {121.25, 33.5, 4096};
  stats.per[1] = {99.875, 41.0625, 8192};
  return stats;
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("parameters round trip bit for bit") {
  TempDir tmp;
  const ModelSpec spec = small_spec();
  Model model = trained_ish_model(spec, 7);
  const auto path = tmp.path / "model.ckpt";
  save_checkpoint(path, model, nullptr, nullptr, some_stats(),
                  {{"note", "unit"}});

  const LoadedCheckpoint loaded = load_checkpoint(path);
  REQUIRE(loaded.model != nullptr);
  CHECK(loaded.model->spec() == spec);
  CHECK_FALSE(loaded.has_optimizer);
  CHECK_FALSE(loaded.has_scheduler);
  CHECK(loaded.meta.at("note") == "unit");
  CHECK(loaded.stats.per[0].mean == 121.25);
  CHECK(loaded.stats.per[1].count == 8192);

  const auto orig = std::as_const(model).params();
  const auto back = std::as_const(*loaded.model).params();
  REQUIRE(orig.size() == back.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    CHECK(orig[i]->name == back[i]->name);
    REQUIRE(orig[i]->value.size() == back[i]->value.size());
    CHECK(orig[i]->value == back[i]->value);  // exact, including every bit
  }
}

TEST_CASE("optimizer and scheduler state survive the round trip") {
  TempDir tmp;
  const ModelSpec spec = small_spec();
  Model model = trained_ish_model(spec, 21);

  AdamConfig acfg;
  acfg.lr = 3.5e-4;
  AdamOptimizer opt(model.params(), acfg);
  Rng rng(5);
  for (int step = 0; step < 3; ++step) {
    for (ParamTensor* p : model.params()) {
      for (auto& g : p->grad) g = rng.normal();
    }
    REQUIRE(opt.step());
  }

  PlateauScheduler sched;
  sched.update(0.9, acfg.lr);
  sched.update(0.95, acfg.lr);  // bad_=1

  const auto path = tmp.path / "resume.ckpt";
  save_checkpoint(path, model, &opt, &sched, some_stats(), {});
  const LoadedCheckpoint loaded = load_checkpoint(path);

  REQUIRE(loaded.has_optimizer);
  CHECK(loaded.adam_config.lr == 3.5e-4);
  CHECK(loaded.adam_step == 3);
  AdamOptimizer opt2 = loaded.make_optimizer();
  CHECK(opt2.step_count() == 3);
  CHECK(opt2.lr() == opt.lr());
  REQUIRE(opt2.moment1().size() == opt.moment1().size());
  for (std::size_t i = 0; i < opt.moment1().size(); ++i) {
    CHECK(opt2.moment1()[i] == opt.moment1()[i]);
    CHECK(opt2.moment2()[i] == opt.moment2()[i]);
  }

  REQUIRE(loaded.has_scheduler);
  PlateauScheduler sched2 = loaded.make_scheduler();
  CHECK(sched2.best() == sched.best());
  CHECK(sched2.bad_updates() == sched.bad_updates());
  CHECK(sched2.primed() == sched.primed());

  // Resumed training continues in lockstep with the original.
  Model model2(*loaded.model);
  for (ParamTensor* p : model.params()) {
    for (auto& g : p->grad) g = 0.25;
  }
  for (ParamTensor* p : model2.params()) {
    for (auto& g : p->grad) g = 0.25;
  }
  AdamOptimizer resumed(model2.params(), loaded.adam_config);
  resumed.moment1() = loaded.adam_m;
  resumed.moment2() = loaded.adam_v;
  resumed.restore(loaded.adam_step);
  REQUIRE(opt.step());
  REQUIRE(resumed.step());
  const auto a = std::as_const(model).params();
  const auto b = std::as_const(model2).params();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->value == b[i]->value);
  }
}

TEST_CASE("norm-layer running statistics are restored") {
  TempDir tmp;
  ModelSpec spec = small_spec();
  spec.norm_layers = true;
  Model model(spec, 3);

  // Push some data through in training mode to move the running stats.
  Tensor4 x(2, 3, 16, 16);
  Rng rng(17);
  for (auto& v : x.data) v = rng.normal();
  Model::Cache cache;
  (void)model.forward(x, cache, true);
  (void)model.forward(x, cache, true);

  const auto path = tmp.path / "norm.ckpt";
  save_checkpoint(path, model, nullptr, nullptr, some_stats(), {});
  const LoadedCheckpoint loaded = load_checkpoint(path);

  const auto orig_state = std::as_const(model).state();
  const auto back_state = std::as_const(*loaded.model).state();
  REQUIRE(!orig_state.empty());
  REQUIRE(orig_state.size() == back_state.size());
  for (std::size_t i = 0; i < orig_state.size(); ++i) {
    CHECK(*orig_state[i] == *back_state[i]);
  }

  // Eval-mode forward (which consumes the running stats) must agree exactly.
  Model::Cache c1, c2;
  const Matrix p1 = model.forward(x, c1, false);
  const Matrix p2 = loaded.model->forward(x, c2, false);
  CHECK(p1.data == p2.data);
}

TEST_CASE("saving twice produces identical bytes") {
  TempDir tmp;
  Model model = trained_ish_model(small_spec(), 31);
  save_checkpoint(tmp.path / "a.ckpt", model, nullptr, nullptr, some_stats(),
                  {{"k", 1}});
  save_checkpoint(tmp.path / "b.ckpt", model, nullptr, nullptr, some_stats(),
                  {{"k", 1}});
  CHECK(read_bytes(tmp.path / "a.ckpt") == read_bytes(tmp.path / "b.ckpt"));

  // Load-then-save is also byte-stable.
  const LoadedCheckpoint loaded = load_checkpoint(tmp.path / "a.ckpt");
  save_checkpoint(tmp.path / "c.ckpt", *loaded.model, nullptr, nullptr,
                  loaded.stats, loaded.meta);
  CHECK(read_bytes(tmp.path / "a.ckpt") == read_bytes(tmp.path / "c.ckpt"));
}

TEST_CASE("damaged files are rejected") {
  TempDir tmp;
  Model model = trained_ish_model(small_spec(), 11);
  const auto path = tmp.path / "v.ckpt";
  save_checkpoint(path, model, nullptr, nullptr, some_stats(), {});

  SUBCASE("bad magic") {
    auto bytes = read_bytes(path);
    bytes[0] = 'Z';
    std::ofstream(path, std::ios::binary) << bytes;
    CHECK_THROWS_AS((void)load_checkpoint(path), DataError);
  }
  SUBCASE("truncated payload") {
    fs::resize_file(path, fs::file_size(path) - 16);
    CHECK_THROWS_AS((void)load_checkpoint(path), DataError);
  }
  SUBCASE("truncated header") {
    fs::resize_file(path, 12);
    CHECK_THROWS_AS((void)load_checkpoint(path), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS((void)load_checkpoint(tmp.path / "none.ckpt"), DataError);
  }
}

TEST_SUITE_END();
