#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "apd/checkpoint.hpp"
#include "apd/config.hpp"
#include "apd/data.hpp"
#include "apd/metrics.hpp"
#include "apd/model.hpp"
#include "apd/optimizer.hpp"

namespace apd {

/// Thresholded change mask (ties at 0.5 count as changed); probability map
/// optionally returned alongside.
LabelMap predict_mask(ApdModel& model, const FeatureMap& x0,
                      const FeatureMap& x1, LabelMap* prob_out = nullptr);

/// Pooled metrics of a model over a sample collection (inference mode).
MetricSummary evaluate(ApdModel& model, const std::vector<Sample>& samples);

/// Full inference forward; exposed for visualization and tests.
ForwardOutput infer_forward(ApdModel& model, ad::Tape& tape,
                            const FeatureMap& x0, const FeatureMap& x1);

struct TrainResult {
  double best_val_f1 = 0.0;
  double final_train_f1 = 0.0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  long iterations_run = 0;
};

/// Model/optimizer/rng snapshot plumbing.
Checkpoint make_checkpoint(const RunConfig& cfg, ApdModel& model,
                           AdamW* opt = nullptr,
                           const nlohmann::json& meta = {});
void restore_model(ApdModel& model, const Checkpoint& ckpt);

/// One training process owns the model; loss parts are logged as one JSON
/// object per line on `log`.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<Sample> train_set,
          std::vector<Sample> val_set);

  /// Resumes parameters, optimizer state, rng streams and iteration counter.
  void resume(const Checkpoint& ckpt);

  TrainResult run(std::ostream* log);

  ApdModel& model() { return model_; }

 private:
  struct StepStats {
    double change = 0.0, deep = 0.0, comparative = 0.0, total = 0.0;
  };
  StepStats train_step(const std::vector<int>& batch_ids);

  RunConfig cfg_;
  std::vector<Sample> train_, val_;
  ApdModel model_;
  AdamW opt_;
  Rng data_rng_, perturb_rng_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  long iter_ = 0;
  double best_val_f1_ = -1.0;
};

}  // namespace apd
