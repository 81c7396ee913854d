#pragma once

#include <cmath>
#include <vector>

#include "apd/autodiff.hpp"

namespace apd {

/// Adaptive-moment optimizer with decoupled weight decay.
class AdamW {
 public:
  AdamW(ad::ParamStore& params, double lr, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(params),
        lr_(lr),
        weight_decay_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    for (const auto& p : params.all()) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(double lr_scale = 1.0) {
    ++t_;
    const double lr = lr_ * lr_scale;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    auto& ps = params_.all();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      ad::Param& p = *ps[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
      v_[i] = beta2_ * v_[i] +
              (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      const Matrix m_hat = m_[i] / bc1;
      const Matrix v_hat = v_[i] / bc2;
      p.value -=
          lr * (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
      if (p.decay) p.value *= 1.0 - lr * weight_decay_;
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }

 private:
  ad::ParamStore& params_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace apd
