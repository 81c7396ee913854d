#pragma once

#include <optional>
#include <string>
#include <vector>

#include "apd/alignment.hpp"
#include "apd/autodiff.hpp"
#include "apd/losses.hpp"
#include "apd/perturbation.hpp"
#include "apd/rng.hpp"

namespace apd {

enum class Backbone { kDesk, kResNet18 };

struct EncoderConfig {
  int stages = 4;
  std::vector<int> widths = {16, 32, 64, 128};
  Backbone backbone = Backbone::kDesk;
};

struct AblationToggles {
  bool alignment = true;
  bool perturbation = true;
  bool decoupling = true;
};

struct ModelConfig {
  EncoderConfig encoder;
  ContextConfig context{1, 4, 4, 256};
  double mask_ratio = 0.25;  // tau
  bool per_sample_perturb = false;
  LabelDownsample label_downsample = LabelDownsample::kNearest;
  AblationToggles ablation;
};

/// Which statistics normalization layers use during a forward pass.
enum class NormMode { kBatchStats, kRunningStats };

struct StageOutput {
  ad::Tape::Var f0_hat, f1_hat;  // aligned
  ad::Tape::Var mask;            // coarse mask in (0,1), 1 x HW
  ad::Tape::Var mask_logit;      // pre-sigmoid, invalid when perturbation off
  ad::Tape::Var diff;            // O, modulated unperturbed difference
  ad::Tape::Var f0_mod, f1_mod;  // modulated features fed to the next stage
  int h = 0, w = 0;
};

struct ForwardOutput {
  std::vector<StageOutput> stages;
  ad::Tape::Var f0_terminal, f1_terminal;  // raw stage-N features
  ad::Tape::Var logit;                     // fused logit at input resolution
  ad::Tape::Var prob;                      // sigmoid(logit)
};

struct LossOutput {
  ad::Tape::Var total, change;
  std::vector<ad::Tape::Var> deep;
  ad::Tape::Var comparative;
};

/// The full change detector: siamese encoder with per-stage graph alignment
/// and perturbation-guided difference prediction, decoupled dual decoders.
class ApdModel {
 public:
  ApdModel(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  std::vector<ad::BnState*> bn_states();
  ad::SparseOpCache& op_cache() { return cache_; }

  /// Siamese forward. `perturbations` supplies one vector per stage during
  /// perturbation training; pass nullptr at inference.
  ForwardOutput forward(ad::Tape& tape, const FeatureMap& x0,
                        const FeatureMap& x1, NormMode norm,
                        const std::vector<PerturbationVector>* perturbations);

  LossOutput losses(ad::Tape& tape, const ForwardOutput& out,
                    const LabelMap& label, const LossConfig& cfg);

  /// Per-stage vectors for one training step.
  std::vector<PerturbationVector> sample_stage_perturbations(Rng& rng) const;

  /// Stage-by-stage single-stream extraction (no cross-stream interaction);
  /// used to verify siamese weight sharing.
  std::vector<Matrix> single_stream_features(const FeatureMap& x,
                                             NormMode norm);

 private:
  struct ConvBn {
    ad::Param* w = nullptr;
    ad::Param* b = nullptr;
    ad::Param* gamma = nullptr;
    ad::Param* beta = nullptr;
    ad::BnState bn;
  };
  struct Stage {
    ConvBn entry;                // stride-2
    std::vector<ConvBn> blocks;  // stride-1; pairs form residual units in
                                 // the resnet-shaped variant
    ad::Param* align_w = nullptr;
    ad::Param* mask_w1 = nullptr;
    ad::Param* mask_b1 = nullptr;
    ad::Param* mask_w2 = nullptr;
    ad::Param* mask_b2 = nullptr;
  };
  struct DecoderBranch {
    ad::Param* entry_w = nullptr;
    ad::Param* entry_b = nullptr;
    std::vector<ConvBn> conv1, conv2;            // one pair per level N..2
    std::vector<ad::Param*> proj_d_w, proj_d_b;  // content-agnostic only
    std::vector<ad::Param*> proj_o_w, proj_o_b;  // content-agnostic only
    ad::Param* head_w = nullptr;
    ad::Param* head_b = nullptr;
  };

  ad::Param& add_weight(const std::string& name, int rows, int cols,
                        bool he_init, bool decay = true);
  ConvBn make_conv_bn(const std::string& name, int cin, int cout, int k);
  ad::Tape::Var run_conv_bn(ad::Tape& t, ad::Tape::Var x, ConvBn& cb, int k,
                            int stride, NormMode norm, bool rectify = true);
  ad::Tape::Var run_stage(ad::Tape& t, ad::Tape::Var x, Stage& s,
                          NormMode norm);
  ad::Tape::Var decode_aware_like(ad::Tape& t, DecoderBranch& br,
                                  ad::Tape::Var entry_input,
                                  const std::vector<StageOutput>& stages,
                                  NormMode norm);
  ad::Tape::Var decode_agnostic(ad::Tape& t, DecoderBranch& br,
                                const std::vector<StageOutput>& stages,
                                NormMode norm);

  ModelConfig cfg_;
  ad::ParamStore params_;
  ad::SparseOpCache cache_;
  Rng init_rng_;
  std::vector<Stage> stages_;
  DecoderBranch aware_, agnostic_, single_;
};

}  // namespace apd
