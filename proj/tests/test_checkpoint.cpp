#include <doctest.h>

#include <filesystem>

#include "apd/checkpoint.hpp"
#include "apd/config.hpp"
#include "apd/trainer.hpp"

using namespace apd;
namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const std::string& name) {
  return fs::temp_directory_path() / ("apd_test_" + name);
}

RunConfig tiny_run_config(std::uint64_t seed) {
  RunConfig cfg;
  cfg.model.encoder.stages = 2;
  cfg.model.encoder.widths = {3, 4};
  cfg.model.context = ContextConfig{1, 1, 2, 256};
  cfg.seed = seed;
  cfg.batch_size = 2;
  cfg.val_interval = 0;
  cfg.augment_enabled = false;
  return cfg;
}

std::vector<Sample> tiny_samples(int n, int size) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    SynthSpec spec;
    spec.size = size;
    spec.seed = 100 + i;
    SynthResult r = synth_generate(spec);
    r.sample.id = "t" + std::to_string(i);
    out.push_back(std::move(r.sample));
  }
  return out;
}

}  // namespace

TEST_CASE("checkpoint files round trip bit-exactly") {
  Checkpoint ckpt;
  ckpt.config = {{"alpha", 1.5}, {"name", "demo"}};
  ckpt.meta = {{"iter", 12}};
  Matrix a(2, 3);
  a << 1.0, -2.5, 3e-17, 4.0, 5.0, -6.0;
  ckpt.arrays.emplace_back("layer.w", a);
  ckpt.arrays.emplace_back("layer.b", Matrix::Constant(1, 1, 0.125));

  const fs::path p = tmp_file("ckpt_roundtrip.ckpt");
  save_checkpoint(p.string(), ckpt);
  const Checkpoint back = load_checkpoint(p.string());
  CHECK(back.config == ckpt.config);
  CHECK(back.meta == ckpt.meta);
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.arrays[0].first == "layer.w");
  CHECK((*back.find("layer.w") - a).cwiseAbs().maxCoeff() == 0.0);
  CHECK((*back.find("layer.b")).value() == 0.125);
  CHECK(back.find("layer.missing") == nullptr);
}

TEST_CASE("loading a nonexistent checkpoint fails cleanly") {
  CHECK_THROWS(load_checkpoint(tmp_file("does_not_exist.ckpt").string()));
}

TEST_CASE("model state survives a checkpoint round trip") {
  const RunConfig cfg = tiny_run_config(3);
  ApdModel model(cfg.model, cfg.seed);
  const Checkpoint ckpt = make_checkpoint(cfg, model, nullptr, {{"iter", 0}});

  const fs::path p = tmp_file("model_roundtrip.ckpt");
  save_checkpoint(p.string(), ckpt);
  const Checkpoint back = load_checkpoint(p.string());

  ApdModel other(cfg.model, cfg.seed + 999);  // different init
  restore_model(other, back);
  for (const auto& param : model.params().all()) {
    const ad::Param* o = other.params().find(param->name);
    REQUIRE(o != nullptr);
    CHECK((o->value - param->value).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("restoring into a mismatched architecture names the parameter") {
  const RunConfig cfg = tiny_run_config(4);
  ApdModel model(cfg.model, cfg.seed);
  const Checkpoint ckpt = make_checkpoint(cfg, model);

  RunConfig bigger = cfg;
  bigger.model.encoder.widths = {4, 4};
  ApdModel other(bigger.model, cfg.seed);
  CHECK_THROWS_WITH_AS(restore_model(other, ckpt),
                       doctest::Contains("enc.s1"), std::runtime_error);
}

TEST_CASE("training, checkpointing and resuming matches uninterrupted training") {
  RunConfig cfg = tiny_run_config(5);
  cfg.iterations = 4;
  cfg.out_dir = (fs::temp_directory_path() / "apd_test_resume_a").string();
  const std::vector<Sample> data = tiny_samples(4, 32);

  // uninterrupted run
  Trainer full(cfg, data, {});
  const TrainResult full_res = full.run(nullptr);

  // two iterations, snapshot, then two more in a fresh process image
  RunConfig half = cfg;
  half.iterations = 2;
  half.out_dir = (fs::temp_directory_path() / "apd_test_resume_b").string();
  Trainer first(half, data, {});
  const TrainResult first_res = first.run(nullptr);

  RunConfig rest = cfg;
  rest.out_dir = half.out_dir;
  Trainer second(rest, data, {});
  second.resume(load_checkpoint(first_res.last_checkpoint));
  const TrainResult second_res = second.run(nullptr);
  CHECK(second_res.iterations_run == 4);

  for (const auto& param : full.model().params().all()) {
    const ad::Param* o = second.model().params().find(param->name);
    REQUIRE(o != nullptr);
    CHECK((o->value - param->value).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(full_res.final_train_f1 == second_res.final_train_f1);
}
