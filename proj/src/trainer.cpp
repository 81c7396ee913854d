#include "apd/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace apd {

ForwardOutput infer_forward(ApdModel& model, ad::Tape& tape,
                            const FeatureMap& x0, const FeatureMap& x1) {
  return model.forward(tape, x0, x1, NormMode::kRunningStats, nullptr);
}

LabelMap predict_mask(ApdModel& model, const FeatureMap& x0,
                      const FeatureMap& x1, LabelMap* prob_out) {
  ad::Tape tape(&model.op_cache());
  const ForwardOutput out = infer_forward(model, tape, x0, x1);
  const Matrix& prob = tape.value(out.prob);
  LabelMap mask(x0.height, x0.width);
  mask.data = (prob.row(0).array() >= 0.5).cast<double>();
  if (prob_out) {
    *prob_out = LabelMap(x0.height, x0.width);
    prob_out->data = prob.row(0);
  }
  return mask;
}

MetricSummary evaluate(ApdModel& model, const std::vector<Sample>& samples) {
  ConfusionCounts counts;
  for (const Sample& s : samples) {
    const LabelMap mask = predict_mask(model, s.x0, s.x1);
    counts = accumulate(mask, s.y, counts);
  }
  return summarize(counts);
}

Checkpoint make_checkpoint(const RunConfig& cfg, ApdModel& model, AdamW* opt,
                           const json& meta) {
  Checkpoint ckpt;
  ckpt.config = to_json(cfg);
  ckpt.meta = meta;
  for (const auto& p : model.params().all())
    ckpt.arrays.emplace_back(p->name, p->value);
  for (ad::BnState* bn : model.bn_states()) {
    ckpt.arrays.emplace_back(bn->name + ".mean", Matrix(bn->running_mean));
    ckpt.arrays.emplace_back(bn->name + ".var", Matrix(bn->running_var));
  }
  if (opt) {
    auto& ps = model.params().all();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      ckpt.arrays.emplace_back("opt.m." + ps[i]->name, opt->first_moments()[i]);
      ckpt.arrays.emplace_back("opt.v." + ps[i]->name,
                               opt->second_moments()[i]);
    }
    ckpt.meta["opt_step"] = opt->step_count();
  }
  return ckpt;
}

void restore_model(ApdModel& model, const Checkpoint& ckpt) {
  for (auto& p : model.params().all()) {
    const Matrix* m = ckpt.find(p->name);
    if (!m)
      throw std::runtime_error("checkpoint is missing parameter " + p->name);
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols())
      throw std::runtime_error("checkpoint shape mismatch for parameter " +
                               p->name);
    p->value = *m;
  }
  for (ad::BnState* bn : model.bn_states()) {
    const Matrix* mean = ckpt.find(bn->name + ".mean");
    const Matrix* var = ckpt.find(bn->name + ".var");
    if (!mean || !var)
      throw std::runtime_error("checkpoint is missing statistics " + bn->name);
    bn->running_mean = mean->col(0);
    bn->running_var = var->col(0);
  }
}

Trainer::Trainer(const RunConfig& cfg, std::vector<Sample> train_set,
                 std::vector<Sample> val_set)
    : cfg_(cfg),
      train_(std::move(train_set)),
      val_(std::move(val_set)),
      model_(cfg.model, cfg.seed),
      opt_(model_.params(), cfg.lr, cfg.weight_decay),
      data_rng_(cfg.seed + 0x9e3779b97f4a7c15ull),
      perturb_rng_(cfg.seed + 0x517cc1b727220a95ull) {
  require(!train_.empty(), "Trainer: empty training set");
  order_.resize(train_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), data_rng_.engine());
}

void Trainer::resume(const Checkpoint& ckpt) {
  restore_model(model_, ckpt);
  auto& ps = model_.params().all();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Matrix* m = ckpt.find("opt.m." + ps[i]->name);
    const Matrix* v = ckpt.find("opt.v." + ps[i]->name);
    if (m) opt_.first_moments()[i] = *m;
    if (v) opt_.second_moments()[i] = *v;
  }
  if (ckpt.meta.contains("opt_step"))
    opt_.set_step_count(ckpt.meta["opt_step"].get<long>());
  if (ckpt.meta.contains("iter")) iter_ = ckpt.meta["iter"].get<long>();
  if (ckpt.meta.contains("data_rng"))
    data_rng_.deserialize(ckpt.meta["data_rng"].get<std::string>());
  if (ckpt.meta.contains("perturb_rng"))
    perturb_rng_.deserialize(ckpt.meta["perturb_rng"].get<std::string>());
  if (ckpt.meta.contains("cursor"))
    cursor_ = ckpt.meta["cursor"].get<std::size_t>();
  if (ckpt.meta.contains("order"))
    order_ = ckpt.meta["order"].get<std::vector<int>>();
  if (ckpt.meta.contains("best_val_f1"))
    best_val_f1_ = ckpt.meta["best_val_f1"].get<double>();
}

Trainer::StepStats Trainer::train_step(const std::vector<int>& batch_ids) {
  const int b = static_cast<int>(batch_ids.size());
  const NormMode norm =
      cfg_.norm_eval_mode ? NormMode::kRunningStats : NormMode::kBatchStats;

  // augmented views, drawn in a fixed order
  std::vector<Sample> views;
  views.reserve(b);
  for (int id : batch_ids)
    views.push_back(cfg_.augment_enabled
                        ? augment(train_[id], cfg_.aug, data_rng_)
                        : train_[id]);

  // perturbation vectors: one set per step, or one per sample
  std::vector<std::vector<PerturbationVector>> vs;
  if (cfg_.model.ablation.perturbation) {
    const int n_sets = cfg_.model.per_sample_perturb ? b : 1;
    for (int i = 0; i < n_sets; ++i)
      vs.push_back(model_.sample_stage_perturbations(perturb_rng_));
  }

  std::vector<std::unique_ptr<ad::Tape>> tapes(b);
  std::vector<StepStats> stats(b);
  auto worker = [&](int i) {
    tapes[i] = std::make_unique<ad::Tape>(&model_.op_cache());
    ad::Tape& t = *tapes[i];
    const std::vector<PerturbationVector>* pv =
        vs.empty() ? nullptr
                   : &vs[cfg_.model.per_sample_perturb ? i : 0];
    const ForwardOutput out =
        model_.forward(t, views[i].x0, views[i].x1, norm, pv);
    const LossOutput lo = model_.losses(t, out, views[i].y, cfg_.loss);
    stats[i].change = t.value(lo.change)(0, 0);
    for (auto d : lo.deep) stats[i].deep += t.value(d)(0, 0);
    stats[i].comparative = t.value(lo.comparative)(0, 0);
    stats[i].total = t.value(lo.total)(0, 0);
    t.backward(lo.total);
  };

  const int threads = std::max(1, std::min(cfg_.threads, b));
  if (threads == 1) {
    for (int i = 0; i < b; ++i) worker(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int k = 0; k < threads; ++k)
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < b; i = next.fetch_add(1))
          worker(i);
      });
    for (auto& th : pool) th.join();
  }

  // fixed-order reduction keeps results independent of thread scheduling
  model_.params().zero_grad();
  for (int i = 0; i < b; ++i) {
    for (auto& [param, grad] : tapes[i]->param_grads)
      const_cast<ad::Param*>(param)->grad += grad / b;
    for (auto& [bn, mean, var, momentum] : tapes[i]->bn_updates) {
      bn->running_mean = (1.0 - momentum) * bn->running_mean + momentum * mean;
      bn->running_var = (1.0 - momentum) * bn->running_var + momentum * var;
    }
  }

  StepStats agg;
  for (const auto& s : stats) {
    agg.change += s.change / b;
    agg.deep += s.deep / b;
    agg.comparative += s.comparative / b;
    agg.total += s.total / b;
  }
  if (!std::isfinite(agg.total)) {
    std::string ids;
    for (int id : batch_ids) ids += train_[id].id + " ";
    throw std::runtime_error("non-finite loss at iteration " +
                             std::to_string(iter_ + 1) + ", batch: " + ids);
  }
  return agg;
}

TrainResult Trainer::run(std::ostream* log) {
  fs::create_directories(cfg_.out_dir);
  TrainResult result;
  const long target = cfg_.iterations;

  while (iter_ < target) {
    std::vector<int> batch;
    for (int i = 0; i < cfg_.batch_size; ++i) {
      if (cursor_ >= order_.size()) {
        std::shuffle(order_.begin(), order_.end(), data_rng_.engine());
        cursor_ = 0;
      }
      batch.push_back(order_[cursor_++]);
    }

    const StepStats s = train_step(batch);
    double lr_scale = 1.0;
    if (cfg_.lr_schedule == "linear")
      lr_scale = 1.0 - static_cast<double>(iter_) / target;
    opt_.step(lr_scale);
    ++iter_;

    const bool do_val =
        cfg_.val_interval > 0 &&
        (iter_ % cfg_.val_interval == 0 || iter_ == target) && !val_.empty();
    std::optional<double> val_f1;
    if (do_val) {
      const MetricSummary m = evaluate(model_, val_);
      val_f1 = m.f1;
      if (m.f1 > best_val_f1_) {
        best_val_f1_ = m.f1;
        json meta = {{"iter", iter_}, {"best_val_f1", best_val_f1_}};
        result.best_checkpoint =
            (fs::path(cfg_.out_dir) / "best.ckpt").string();
        save_checkpoint(result.best_checkpoint,
                        make_checkpoint(cfg_, model_, &opt_, meta));
      }
    }

    if (log && (iter_ % cfg_.log_interval == 0 || iter_ == target || do_val)) {
      json line = {{"iter", iter_},
                   {"l_ce", s.change},
                   {"l_deep", s.deep},
                   {"l_comp", s.comparative},
                   {"total", s.total}};
      if (val_f1) line["val_f1"] = *val_f1;
      (*log) << line.dump() << "\n";
      log->flush();
    }
  }

  json meta = {{"iter", iter_},
               {"best_val_f1", best_val_f1_},
               {"data_rng", data_rng_.serialize()},
               {"perturb_rng", perturb_rng_.serialize()},
               {"cursor", cursor_},
               {"order", order_},
               {"ablation",
                {{"alignment", cfg_.model.ablation.alignment},
                 {"perturbation", cfg_.model.ablation.perturbation},
                 {"decoupling", cfg_.model.ablation.decoupling}}}};
  result.last_checkpoint = (fs::path(cfg_.out_dir) / "last.ckpt").string();
  save_checkpoint(result.last_checkpoint,
                  make_checkpoint(cfg_, model_, &opt_, meta));
  if (result.best_checkpoint.empty()) result.best_checkpoint = result.last_checkpoint;

  result.best_val_f1 = best_val_f1_;
  result.final_train_f1 = evaluate(model_, train_).f1;
  result.iterations_run = iter_;
  return result;
}

}  // namespace apd
