#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "apd/alignment.hpp"
#include "apd/feature_map.hpp"

namespace apd::ad {

/// Trainable array. `grad` is the cross-batch reduction target owned by the
/// optimizer loop; tapes accumulate per-sample gradients privately.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = true;  // participates in decoupled weight decay
};

class ParamStore {
 public:
  Param& add(const std::string& name, int rows, int cols, bool decay = true);
  Param* find(const std::string& name);
  std::vector<std::unique_ptr<Param>>& all() { return params_; }
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

/// Normalization running statistics (moving-average convention).
struct BnState {
  std::string name;
  Vector running_mean;
  Vector running_var;
};

/// Cached constant sparse operators (conv taps, bilinear upsampling),
/// keyed by shape. Shared across tapes; lookup is mutex-guarded.
class SparseOpCache {
 public:
  using OpPtr = std::shared_ptr<const SparseOp>;
  /// Tap t of a k x k convolution with stride s and zero padding k/2:
  /// an HWin x HWout selection matrix.
  OpPtr conv_tap(int h, int w, int k, int stride, int tap);
  /// Half-pixel bilinear x2 upsampling, HW x (4*HW), rows sum to 1 per column.
  OpPtr upsample2(int h, int w);

 private:
  std::mutex mu_;
  std::map<std::tuple<int, int, int, int, int>, OpPtr> taps_;
  std::map<std::pair<int, int>, OpPtr> ups_;
};

inline int conv_out_dim(int in, int k, int stride) {
  return (in + 2 * (k / 2) - k) / stride + 1;
}

/// Reverse-mode tape over channel-major feature matrices (C x H*W).
/// Build ops forward, then call backward(loss) once; per-parameter gradients
/// land in `param_grads` so concurrent tapes never race on shared state.
class Tape {
 public:
  struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  explicit Tape(SparseOpCache* cache = nullptr) : cache_(cache) {}

  const Matrix& value(Var v) const { return nodes_[v.i].value; }
  int height(Var v) const { return nodes_[v.i].h; }
  int width(Var v) const { return nodes_[v.i].w; }

  Var input(const Matrix& m, int h = 0, int w = 0);
  Var param(Param& p, int h = 0, int w = 0);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var relu(Var x);
  Var sigmoid(Var x);
  /// channel i scaled by constant v[i]
  Var scale_channels(Var x, const Vector& v);
  /// every channel row of x multiplied elementwise by the 1 x HW row m
  Var rowvec_mul(Var x, Var m);
  Var concat_rows(Var a, Var b);
  /// rowwise mean broadcast back over all pixels
  Var gap_broadcast(Var x);
  /// w.value * x (+ b); pixelwise perceptron layer / 1x1 convolution
  Var linear(Var x, Param& w, Param* b = nullptr);
  /// x * (*op); op held constant under differentiation
  Var sparse_right(Var x, SparseOpCache::OpPtr op, int out_h, int out_w);
  Var conv2d(Var x, Param& w, Param& b, int k, int stride);
  Var batchnorm(Var x, Param& gamma, Param& beta, BnState& state,
                bool batch_stats, double momentum = 0.1, double eps = 1e-5);
  Var upsample2(Var x);

  /// scalar nodes (1x1 values)
  Var bce_with_logits(Var z, const RowVector& target);
  Var dice(Var prob, const RowVector& target, double smooth = 1.0);
  Var comparative(Var f0, Var f1, const RowVector& target, double gamma,
                  bool margin_form);
  Var weighted_sum(const std::vector<Var>& parts,
                   const std::vector<double>& weights);

  void backward(Var loss);

  /// per-tape parameter gradients, reduced by the caller in a fixed order
  std::unordered_map<const Param*, Matrix> param_grads;
  /// pending running-statistic updates (mean, unbiased var), applied by the
  /// caller in a fixed order
  std::vector<std::tuple<BnState*, Vector, Vector, double>> bn_updates;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    int h = 0, w = 0;
    std::function<void(Tape&, const Matrix&)> back;  // arg: this node's grad
  };

  Var make(Matrix value, int h, int w,
           std::function<void(Tape&, const Matrix&)> back);
  Matrix& gradref(int i);
  void add_grad(int i, const Matrix& g);

  std::vector<Node> nodes_;
  SparseOpCache* cache_;
};

}  // namespace apd::ad
