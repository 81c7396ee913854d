#pragma once

#include <optional>
#include <tuple>

#include "apd/feature_map.hpp"
#include "apd/rng.hpp"

namespace apd {

/// Discrete channel modulation vector: entries in {-1, 0, +1} with
/// round(tau*C) zeros.
struct PerturbationVector {
  Eigen::VectorXd values;  // length C
  double mask_ratio = 0.0;
};

enum class LabelDownsample { kNearest, kMaxPool };

/// Pixelwise two-layer perceptron producing the coarse mask logit:
/// 2C -> hidden -> 1, rectifier between layers, sigmoid on top.
struct MaskHeadParams {
  Matrix w1;  // hidden x 2C
  Vector b1;  // hidden
  Matrix w2;  // 1 x hidden
  Vector b2;  // 1

  static MaskHeadParams zeros(int channels, int hidden = -1);
};

PerturbationVector sample_perturbation(int channels, double tau, Rng& rng);

/// (F0 - F1) with channel i scaled by v[i]; plain difference when v absent.
FeatureMap perturbed_difference(const FeatureMap& f0, const FeatureMap& f1,
                                const std::optional<PerturbationVector>& v);

/// sigmoid(MLP(cat(GAP(o) broadcast, o))) applied pixelwise; values in (0,1).
LabelMap coarse_mask(const FeatureMap& o, const MaskHeadParams& p);

/// Spatial modulation: (F0*M, F1*M, (F0-F1)*M) with M broadcast over channels.
std::tuple<FeatureMap, FeatureMap, FeatureMap> modulate(const FeatureMap& f0,
                                                        const FeatureMap& f1,
                                                        const LabelMap& m);

LabelMap downsample_label(const LabelMap& y, int target_h, int target_w,
                          LabelDownsample mode = LabelDownsample::kNearest);

/// Mean binary cross-entropy of mask M against binary target, with 1e-7
/// clipping against saturated values.
double deep_supervision_loss(const LabelMap& m, const LabelMap& y);

inline constexpr double kBceEps = 1e-7;

}  // namespace apd
