#include "apd/perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace apd {

MaskHeadParams MaskHeadParams::zeros(int channels, int hidden) {
  if (hidden < 1) hidden = std::max(1, channels / 2);
  MaskHeadParams p;
  p.w1 = Matrix::Zero(hidden, 2 * channels);
  p.b1 = Vector::Zero(hidden);
  p.w2 = Matrix::Zero(1, hidden);
  p.b2 = Vector::Zero(1);
  return p;
}

PerturbationVector sample_perturbation(int channels, double tau, Rng& rng) {
  require(channels >= 1, "sample_perturbation: channels must be positive");
  require(tau >= 0.0 && tau < 1.0, "sample_perturbation: mask ratio not in [0,1)");
  // round half away from zero
  const int zeros = static_cast<int>(std::llround(tau * channels));

  PerturbationVector v;
  v.mask_ratio = tau;
  v.values.resize(channels);
  for (int c = 0; c < channels; ++c)
    v.values(c) = rng.bernoulli(0.5) ? 1.0 : -1.0;

  // uniform choice of masked channels without replacement
  std::vector<int> idx(channels);
  std::iota(idx.begin(), idx.end(), 0);
  for (int t = 0; t < zeros; ++t) {
    const int pick = rng.uniform_int(t, channels - 1);
    std::swap(idx[t], idx[pick]);
    v.values(idx[t]) = 0.0;
  }
  return v;
}

FeatureMap perturbed_difference(const FeatureMap& f0, const FeatureMap& f1,
                                const std::optional<PerturbationVector>& v) {
  require(f0.same_shape(f1), "perturbed_difference: shape mismatch");
  FeatureMap out(f0.channels(), f0.height, f0.width);
  out.data = f0.data - f1.data;
  if (v) {
    require(v->values.size() == f0.channels(),
            "perturbed_difference: vector length mismatch");
    out.data = v->values.asDiagonal() * out.data;
  }
  return out;
}

LabelMap coarse_mask(const FeatureMap& o, const MaskHeadParams& p) {
  require(p.w1.cols() == 2 * o.channels(), "coarse_mask: head/feature mismatch");
  const Vector gap = o.data.rowwise().mean();
  // cat(GAP broadcast, o) along channels
  Matrix cat(2 * o.channels(), o.pixels());
  cat.topRows(o.channels()).colwise() = gap;
  cat.bottomRows(o.channels()) = o.data;
  Matrix hidden = ((p.w1 * cat).colwise() + p.b1).cwiseMax(0.0);
  RowVector logit = ((p.w2 * hidden).colwise() + p.b2).row(0);
  LabelMap m(o.height, o.width);
  m.data = (1.0 + (-logit.array()).exp()).inverse();
  return m;
}

std::tuple<FeatureMap, FeatureMap, FeatureMap> modulate(const FeatureMap& f0,
                                                        const FeatureMap& f1,
                                                        const LabelMap& m) {
  require(f0.same_shape(f1), "modulate: feature shape mismatch");
  require(m.height == f0.height && m.width == f0.width,
          "modulate: mask shape mismatch");
  FeatureMap t0(f0.channels(), f0.height, f0.width);
  FeatureMap t1(f0.channels(), f0.height, f0.width);
  FeatureMap o(f0.channels(), f0.height, f0.width);
  t0.data = f0.data.array().rowwise() * m.data.array();
  t1.data = f1.data.array().rowwise() * m.data.array();
  o.data = (f0.data - f1.data).array().rowwise() * m.data.array();
  return {std::move(t0), std::move(t1), std::move(o)};
}

LabelMap downsample_label(const LabelMap& y, int target_h, int target_w,
                          LabelDownsample mode) {
  require(target_h >= 1 && target_w >= 1, "downsample_label: degenerate target");
  require(target_h <= y.height && target_w <= y.width,
          "downsample_label: target exceeds source");
  LabelMap out(target_h, target_w);
  if (mode == LabelDownsample::kNearest) {
    for (int u = 0; u < target_h; ++u) {
      const int su = static_cast<int>(static_cast<long>(u) * y.height / target_h);
      for (int v = 0; v < target_w; ++v) {
        const int sv = static_cast<int>(static_cast<long>(v) * y.width / target_w);
        out.at(u, v) = y.at(su, sv);
      }
    }
  } else {
    // changed if any source pixel of the cell changed
    for (int u = 0; u < target_h; ++u) {
      const int u0 = static_cast<int>(static_cast<long>(u) * y.height / target_h);
      const int u1 = static_cast<int>(static_cast<long>(u + 1) * y.height / target_h);
      for (int v = 0; v < target_w; ++v) {
        const int v0 = static_cast<int>(static_cast<long>(v) * y.width / target_w);
        const int v1 = static_cast<int>(static_cast<long>(v + 1) * y.width / target_w);
        double val = 0.0;
        for (int su = u0; su < std::max(u1, u0 + 1); ++su)
          for (int sv = v0; sv < std::max(v1, v0 + 1); ++sv)
            val = std::max(val, y.at(su, sv));
        out.at(u, v) = val;
      }
    }
  }
  return out;
}

double deep_supervision_loss(const LabelMap& m, const LabelMap& y) {
  require(m.height == y.height && m.width == y.width,
          "deep_supervision_loss: shape mismatch");
  const auto p = m.data.array().max(kBceEps).min(1.0 - kBceEps);
  const auto t = y.data.array();
  return -(t * p.log() + (1.0 - t) * (1.0 - p).log()).mean();
}

}  // namespace apd
