#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "apd/data.hpp"
#include "apd/losses.hpp"
#include "apd/model.hpp"

namespace apd {

/// Everything a run needs; serialized as JSON and echoed into checkpoints.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;

  // optimizer (adaptive moments with decoupled weight decay)
  double lr = 1e-3;
  double weight_decay = 0.05;
  int iterations = 600;
  int batch_size = 4;
  std::string lr_schedule = "constant";  // or "linear"

  int val_interval = 50;
  int log_interval = 10;
  bool norm_eval_mode = false;  // normalization from running stats in training
  int threads = 1;
  std::uint64_t seed = 0;

  std::string data_root;
  std::string out_dir = "runs/default";

  AugPolicy aug;
  bool augment_enabled = true;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies a dotted-path override, e.g. "loss.lambda1=0.5" or
/// "model.ablation.alignment=false". The value is parsed as JSON when
/// possible, otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides);

}  // namespace apd
