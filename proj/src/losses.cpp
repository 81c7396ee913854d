#include "apd/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace apd {

double change_loss(const LabelMap& y_hat, const LabelMap& y) {
  require(y_hat.height == y.height && y_hat.width == y.width,
          "change_loss: shape mismatch");
  return deep_supervision_loss(y_hat, y);
}

double comparative_loss(const FeatureMap& f0, const FeatureMap& f1,
                        const LabelMap& y, double gamma,
                        ComparativeForm form) {
  require(f0.same_shape(f1), "comparative_loss: feature shape mismatch");
  require(y.height == f0.height && y.width == f0.width,
          "comparative_loss: label shape mismatch");
  require(gamma > 0.0, "comparative_loss: margin must be positive");
  double acc = 0.0;
  for (int p = 0; p < f0.pixels(); ++p) {
    const double d = (f0.data.col(p) - f1.data.col(p)).norm();
    const double changed = (form == ComparativeForm::kMargin)
                               ? std::max(gamma - d, 0.0)
                               : std::max(d - gamma, 0.0);
    acc += y.data(p) * changed + (1.0 - y.data(p)) * d;
  }
  return acc / f0.pixels();
}

double total_loss(double change, const std::vector<double>& deep_losses,
                  double comparative, const LossConfig& cfg) {
  if (change < 0.0 || comparative < 0.0)
    throw std::logic_error("total_loss: negative loss part");
  double deep = 0.0;
  for (double d : deep_losses) {
    if (d < 0.0) throw std::logic_error("total_loss: negative deep loss part");
    deep += d;
  }
  return change + cfg.lambda1 * deep + cfg.lambda2 * comparative;
}

double dice_loss(const LabelMap& m, const LabelMap& y, double smooth) {
  require(m.height == y.height && m.width == y.width,
          "dice_loss: shape mismatch");
  const double inter = (m.data.array() * y.data.array()).sum();
  const double denom = m.data.sum() + y.data.sum() + smooth;
  return 1.0 - (2.0 * inter + smooth) / denom;
}

}  // namespace apd
