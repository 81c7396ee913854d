#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "apd/config.hpp"
#include "apd/data.hpp"
#include "apd/image_io.hpp"
#include "apd/trainer.hpp"
#include "apd/visualize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON run configuration");
  cmd->add_option("--set", opts.overrides,
                  "Override a config key, e.g. --set loss.lambda1=0.5");
}

apd::ApdModel model_from_checkpoint(const apd::Checkpoint& ckpt) {
  const apd::RunConfig cfg = apd::run_config_from_json(ckpt.config);
  apd::ApdModel model(cfg.model, cfg.seed);
  apd::restore_model(model, ckpt);
  return model;
}

int cmd_gen_data(const std::string& out, int size, int n_train, int n_val,
                 int n_test, std::uint64_t seed, int change_count,
                 double nuisance) {
  apd::SynthSpec spec;
  spec.size = size;
  spec.change_count = change_count;
  spec.nuisance_strength = nuisance;

  int total = 0;
  bool append = false;
  std::uint64_t sample_seed = seed;
  for (const auto& [split, count] :
       {std::pair{std::string("train"), n_train},
        std::pair{std::string("val"), n_val},
        std::pair{std::string("test"), n_test}}) {
    std::vector<apd::SynthResult> samples;
    for (int i = 0; i < count; ++i) {
      spec.seed = sample_seed++;
      apd::SynthResult r = apd::synth_generate(spec);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s_%05d", split.c_str(), i);
      r.sample.id = buf;
      samples.push_back(std::move(r));
    }
    apd::write_dataset(out, split, samples, append);
    append = true;
    total += count;
  }
  std::cout << "wrote " << total << " samples to " << out << "\n";
  return kExitOk;
}

int cmd_train(const CommonOpts& opts, const std::string& resume_path) {
  apd::RunConfig cfg = apd::load_run_config(opts.config_path, opts.overrides);
  if (cfg.data_root.empty()) {
    std::cerr << "train: data.root is not set\n";
    return kExitUsage;
  }
  std::vector<apd::Sample> train = apd::load_dataset(cfg.data_root, "train");
  std::vector<apd::Sample> val;
  try {
    val = apd::load_dataset(cfg.data_root, "val");
  } catch (const std::runtime_error&) {
    // validation split is optional
  }

  apd::Trainer trainer(cfg, std::move(train), std::move(val));
  if (!resume_path.empty())
    trainer.resume(apd::load_checkpoint(resume_path));

  fs::create_directories(cfg.out_dir);
  std::ofstream log(fs::path(cfg.out_dir) / "train_log.jsonl",
                    resume_path.empty() ? std::ios::trunc : std::ios::app);
  const apd::TrainResult result = trainer.run(&log);
  std::cout << json({{"iterations", result.iterations_run},
                     {"best_val_f1", result.best_val_f1},
                     {"train_f1", result.final_train_f1},
                     {"best_checkpoint", result.best_checkpoint},
                     {"last_checkpoint", result.last_checkpoint}})
                   .dump(2)
            << "\n";
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path,
             const std::string& split, const std::string& report_path) {
  const apd::Checkpoint ckpt = apd::load_checkpoint(ckpt_path);
  json merged = ckpt.config;
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw std::invalid_argument("cannot open config file");
    json extra;
    in >> extra;
    merged.merge_patch(extra);
  }
  for (const auto& o : opts.overrides) apd::apply_override(merged, o);
  const apd::RunConfig cfg = apd::run_config_from_json(merged);
  if (cfg.data_root.empty()) {
    std::cerr << "eval: data.root is not set\n";
    return kExitUsage;
  }

  apd::ApdModel model(cfg.model, cfg.seed);
  apd::restore_model(model, ckpt);
  const std::vector<apd::Sample> samples =
      apd::load_dataset(cfg.data_root, split);
  const apd::MetricSummary m = apd::evaluate(model, samples);

  json report = {
      {"precision", m.precision},
      {"recall", m.recall},
      {"f1", m.f1},
      {"iou", m.iou},
      {"counts",
       {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"fn", m.counts.fn},
        {"tn", m.counts.tn}}},
      {"degenerate_flags",
       {{"precision", m.degenerate_precision},
        {"recall", m.degenerate_recall},
        {"f1", m.degenerate_f1},
        {"iou", m.degenerate_iou}}},
      {"toggles",
       {{"alignment", cfg.model.ablation.alignment},
        {"perturbation", cfg.model.ablation.perturbation},
        {"decoupling", cfg.model.ablation.decoupling}}},
      {"split", split},
      {"samples", samples.size()}};
  std::cout << report.dump(2) << "\n";
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << report.dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_predict(const std::string& ckpt_path, const std::string& a_path,
                const std::string& b_path, const std::string& out_path,
                const std::string& prob_path) {
  apd::ApdModel model = model_from_checkpoint(apd::load_checkpoint(ckpt_path));
  const apd::FeatureMap x0 = apd::read_image_png(a_path);
  const apd::FeatureMap x1 = apd::read_image_png(b_path);
  if (!x0.same_shape(x1)) {
    std::cerr << "predict: input sizes differ (" << x0.height << "x"
              << x0.width << " vs " << x1.height << "x" << x1.width << ")\n";
    return kExitUsage;
  }
  apd::LabelMap prob;
  const apd::LabelMap mask = apd::predict_mask(model, x0, x1, &prob);
  apd::write_mask_png(out_path, mask);
  if (!prob_path.empty()) apd::write_gray_png(prob_path, prob);
  std::cout << "changed_pixels " << static_cast<long>(mask.data.sum()) << "\n";
  return kExitOk;
}

int cmd_visualize(const std::string& ckpt_path, const std::string& a_path,
                  const std::string& b_path, const std::string& out_dir) {
  apd::ApdModel model = model_from_checkpoint(apd::load_checkpoint(ckpt_path));
  const apd::FeatureMap x0 = apd::read_image_png(a_path);
  const apd::FeatureMap x1 = apd::read_image_png(b_path);
  if (!x0.same_shape(x1)) {
    std::cerr << "visualize: input sizes differ\n";
    return kExitUsage;
  }
  const apd::VisualizationFiles files =
      apd::write_visualizations(model, x0, x1, out_dir);
  std::cout << "wrote "
            << files.mask_paths.size() + files.diff_paths.size() + 1
            << " files to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"APD change detector"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_out = "data/synth";
  int gen_size = 64, gen_train = 32, gen_val = 8, gen_test = 8;
  int gen_changes = 2;
  double gen_nuisance = 0.1;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "Output dataset directory");
  gen->add_option("--size", gen_size, "Image size in pixels");
  gen->add_option("--train", gen_train, "Training pair count");
  gen->add_option("--val", gen_val, "Validation pair count");
  gen->add_option("--test", gen_test, "Test pair count");
  gen->add_option("--seed", gen_seed, "Generation seed");
  gen->add_option("--change-count", gen_changes, "Changed objects per pair");
  gen->add_option("--nuisance", gen_nuisance,
                  "Photometric pseudo-change strength on the second image");

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  CommonOpts train_opts;
  std::string resume_path;
  add_common(train, train_opts);
  train->add_option("--resume", resume_path, "Checkpoint to resume from");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  CommonOpts eval_opts;
  std::string eval_ckpt, eval_split = "test", eval_report;
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--split", eval_split, "Dataset split");
  eval->add_option("--report", eval_report, "Metrics report output path");

  // predict
  auto* predict = app.add_subcommand("predict", "Predict a change mask");
  std::string pr_ckpt, pr_a, pr_b, pr_out = "mask.png", pr_prob;
  predict->add_option("--checkpoint", pr_ckpt, "Checkpoint file")->required();
  predict->add_option("--a", pr_a, "Pre-change image")->required();
  predict->add_option("--b", pr_b, "Post-change image")->required();
  predict->add_option("--out", pr_out, "Output mask PNG (0/255)");
  predict->add_option("--prob", pr_prob, "Optional probability map PNG");

  // visualize
  auto* vis = app.add_subcommand("visualize", "Per-stage heatmaps");
  std::string vi_ckpt, vi_a, vi_b, vi_out = "viz";
  vis->add_option("--checkpoint", vi_ckpt, "Checkpoint file")->required();
  vis->add_option("--a", vi_a, "Pre-change image")->required();
  vis->add_option("--b", vi_b, "Post-change image")->required();
  vis->add_option("--out", vi_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_size, gen_train, gen_val, gen_test,
                          gen_seed, gen_changes, gen_nuisance);
    if (train->parsed()) return cmd_train(train_opts, resume_path);
    if (eval->parsed())
      return cmd_eval(eval_opts, eval_ckpt, eval_split, eval_report);
    if (predict->parsed())
      return cmd_predict(pr_ckpt, pr_a, pr_b, pr_out, pr_prob);
    if (vis->parsed()) return cmd_visualize(vi_ckpt, vi_a, vi_b, vi_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
