#pragma once

#include <vector>

#include "apd/feature_map.hpp"
#include "apd/perturbation.hpp"

namespace apd {

enum class ComparativeForm { kMargin, kLiteral };
enum class DeepSupervisionForm { kBce, kDice };

struct LossConfig {
  double lambda1 = 1.0;  // deep-supervision weight
  double lambda2 = 1.0;  // comparative weight
  double gamma = 1.0;    // comparative margin
  ComparativeForm comparative_form = ComparativeForm::kMargin;
  DeepSupervisionForm deep_supervision = DeepSupervisionForm::kBce;
};

/// Mean binary cross-entropy of the fused probability map against the label.
double change_loss(const LabelMap& y_hat, const LabelMap& y);

/// Margin-based feature regularizer over stage-N pixel embeddings.
/// margin form:  mean( Y*[gamma - d]+ + (1-Y)*d )
/// literal form: mean( Y*[d - gamma]+ + (1-Y)*d )
double comparative_loss(const FeatureMap& f0, const FeatureMap& f1,
                        const LabelMap& y, double gamma,
                        ComparativeForm form = ComparativeForm::kMargin);

/// Weighted total: change + lambda1 * sum(deep) + lambda2 * comparative.
double total_loss(double change, const std::vector<double>& deep_losses,
                  double comparative, const LossConfig& cfg);

/// Soft dice loss with smoothing s = 1.
double dice_loss(const LabelMap& m, const LabelMap& y, double smooth = 1.0);

}  // namespace apd
