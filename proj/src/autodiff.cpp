#include "apd/autodiff.hpp"

#include <cmath>

namespace apd::ad {

Param& ParamStore::add(const std::string& name, int rows, int cols,
                       bool decay) {
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  p->decay = decay;
  params_.push_back(std::move(p));
  return *params_.back();
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

SparseOpCache::OpPtr SparseOpCache::conv_tap(int h, int w, int k, int stride,
                                             int tap) {
  std::lock_guard<std::mutex> lock(mu_);
  auto key = std::make_tuple(h, w, k, stride, tap);
  auto it = taps_.find(key);
  if (it != taps_.end()) return it->second;

  const int pad = k / 2;
  const int h2 = conv_out_dim(h, k, stride);
  const int w2 = conv_out_dim(w, k, stride);
  const int di = tap / k, dj = tap % k;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(h2) * w2);
  for (int uo = 0; uo < h2; ++uo) {
    const int ui = uo * stride - pad + di;
    if (ui < 0 || ui >= h) continue;
    for (int vo = 0; vo < w2; ++vo) {
      const int vi = vo * stride - pad + dj;
      if (vi < 0 || vi >= w) continue;
      trips.emplace_back(ui * w + vi, uo * w2 + vo, 1.0);
    }
  }
  auto op = std::make_shared<SparseOp>(h * w, h2 * w2);
  op->setFromTriplets(trips.begin(), trips.end());
  taps_[key] = op;
  return op;
}

SparseOpCache::OpPtr SparseOpCache::upsample2(int h, int w) {
  std::lock_guard<std::mutex> lock(mu_);
  auto key = std::make_pair(h, w);
  auto it = ups_.find(key);
  if (it != ups_.end()) return it->second;

  const int h2 = 2 * h, w2 = 2 * w;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(h2) * w2 * 4);
  auto clampi = [](int x, int hi) { return x < 0 ? 0 : (x > hi ? hi : x); };
  for (int i = 0; i < h2; ++i) {
    const double fy = (i + 0.5) / 2.0 - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    const int ya = clampi(y0, h - 1), yb = clampi(y0 + 1, h - 1);
    for (int j = 0; j < w2; ++j) {
      const double fx = (j + 0.5) / 2.0 - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      const int xa = clampi(x0, w - 1), xb = clampi(x0 + 1, w - 1);
      const int col = i * w2 + j;
      trips.emplace_back(ya * w + xa, col, (1 - wy) * (1 - wx));
      trips.emplace_back(ya * w + xb, col, (1 - wy) * wx);
      trips.emplace_back(yb * w + xa, col, wy * (1 - wx));
      trips.emplace_back(yb * w + xb, col, wy * wx);
    }
  }
  auto op = std::make_shared<SparseOp>(h * w, h2 * w2);
  op->setFromTriplets(trips.begin(), trips.end());  // duplicates sum
  ups_[key] = op;
  return op;
}

Tape::Var Tape::make(Matrix value, int h, int w,
                     std::function<void(Tape&, const Matrix&)> back) {
  nodes_.push_back(Node{std::move(value), Matrix(), h, w, std::move(back)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::gradref(int i) {
  Node& n = nodes_[i];
  if (n.grad.size() == 0)
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::add_grad(int i, const Matrix& g) { gradref(i) += g; }

Tape::Var Tape::input(const Matrix& m, int h, int w) {
  return make(m, h, w, nullptr);
}

Tape::Var Tape::param(Param& p, int h, int w) {
  Param* ptr = &p;
  return make(p.value, h, w, [ptr](Tape& t, const Matrix& g) {
    auto [it, fresh] = t.param_grads.try_emplace(
        ptr, Matrix::Zero(ptr->value.rows(), ptr->value.cols()));
    it->second += g;
  });
}

Tape::Var Tape::add(Var a, Var b) {
  require(value(a).rows() == value(b).rows() &&
              value(a).cols() == value(b).cols(),
          "tape add: shape mismatch");
  const int ia = a.i, ib = b.i;
  return make(value(a) + value(b), nodes_[ia].h, nodes_[ia].w,
              [ia, ib](Tape& t, const Matrix& g) {
                t.add_grad(ia, g);
                t.add_grad(ib, g);
              });
}

Tape::Var Tape::sub(Var a, Var b) {
  require(value(a).rows() == value(b).rows() &&
              value(a).cols() == value(b).cols(),
          "tape sub: shape mismatch");
  const int ia = a.i, ib = b.i;
  return make(value(a) - value(b), nodes_[ia].h, nodes_[ia].w,
              [ia, ib](Tape& t, const Matrix& g) {
                t.add_grad(ia, g);
                t.gradref(ib) -= g;
              });
}

Tape::Var Tape::relu(Var x) {
  const int ix = x.i;
  Matrix v = value(x).cwiseMax(0.0);
  return make(std::move(v), nodes_[ix].h, nodes_[ix].w,
              [ix](Tape& t, const Matrix& g) {
                t.gradref(ix).array() +=
                    g.array() * (t.nodes_[ix].value.array() > 0.0).cast<double>();
              });
}

Tape::Var Tape::sigmoid(Var x) {
  const int ix = x.i;
  Matrix v = (1.0 + (-value(x).array()).exp()).inverse();
  Var out = make(std::move(v), nodes_[ix].h, nodes_[ix].w, nullptr);
  const int io = out.i;
  nodes_[io].back = [ix, io](Tape& t, const Matrix& g) {
    const auto& s = t.nodes_[io].value.array();
    t.gradref(ix).array() += g.array() * s * (1.0 - s);
  };
  return out;
}

Tape::Var Tape::scale_channels(Var x, const Vector& v) {
  require(v.size() == value(x).rows(), "scale_channels: length mismatch");
  const int ix = x.i;
  return make(v.asDiagonal() * value(x), nodes_[ix].h, nodes_[ix].w,
              [ix, v](Tape& t, const Matrix& g) {
                t.gradref(ix) += v.asDiagonal() * g;
              });
}

Tape::Var Tape::rowvec_mul(Var x, Var m) {
  require(value(m).rows() == 1 && value(m).cols() == value(x).cols(),
          "rowvec_mul: shape mismatch");
  const int ix = x.i, im = m.i;
  Matrix v = value(x).array().rowwise() * value(m).row(0).array();
  return make(std::move(v), nodes_[ix].h, nodes_[ix].w,
              [ix, im](Tape& t, const Matrix& g) {
                const Matrix& xv = t.nodes_[ix].value;
                const Matrix& mv = t.nodes_[im].value;
                t.gradref(ix).array() += g.array().rowwise() * mv.row(0).array();
                t.gradref(im).row(0) +=
                    (g.array() * xv.array()).colwise().sum().matrix();
              });
}

Tape::Var Tape::concat_rows(Var a, Var b) {
  require(value(a).cols() == value(b).cols(), "concat_rows: column mismatch");
  const int ia = a.i, ib = b.i;
  const long ra = value(a).rows(), rb = value(b).rows();
  Matrix v(ra + rb, value(a).cols());
  v.topRows(ra) = value(a);
  v.bottomRows(rb) = value(b);
  return make(std::move(v), nodes_[ia].h, nodes_[ia].w,
              [ia, ib, ra, rb](Tape& t, const Matrix& g) {
                t.gradref(ia) += g.topRows(ra);
                t.gradref(ib) += g.bottomRows(rb);
              });
}

Tape::Var Tape::gap_broadcast(Var x) {
  const int ix = x.i;
  const long n = value(x).cols();
  Vector mean = value(x).rowwise().mean();
  Matrix v = mean.replicate(1, n);
  return make(std::move(v), nodes_[ix].h, nodes_[ix].w,
              [ix, n](Tape& t, const Matrix& g) {
                Vector m = g.rowwise().sum() / static_cast<double>(n);
                t.gradref(ix).colwise() += m;
              });
}

Tape::Var Tape::linear(Var x, Param& w, Param* b) {
  require(w.value.cols() == value(x).rows(), "linear: weight/input mismatch");
  const int ix = x.i;
  Param* wp = &w;
  Param* bp = b;
  Matrix v = w.value * value(x);
  if (bp) v.colwise() += Vector(bp->value.col(0));
  return make(std::move(v), nodes_[ix].h, nodes_[ix].w,
              [ix, wp, bp](Tape& t, const Matrix& g) {
                const Matrix& xv = t.nodes_[ix].value;
                auto [itw, fw] = t.param_grads.try_emplace(
                    wp, Matrix::Zero(wp->value.rows(), wp->value.cols()));
                itw->second += g * xv.transpose();
                if (bp) {
                  auto [itb, fb] = t.param_grads.try_emplace(
                      bp, Matrix::Zero(bp->value.rows(), bp->value.cols()));
                  itb->second.col(0) += g.rowwise().sum();
                }
                t.gradref(ix) += wp->value.transpose() * g;
              });
}

Tape::Var Tape::sparse_right(Var x, SparseOpCache::OpPtr op, int out_h,
                             int out_w) {
  require(op->rows() == value(x).cols(), "sparse_right: operator mismatch");
  const int ix = x.i;
  return make(value(x) * (*op), out_h, out_w,
              [ix, op](Tape& t, const Matrix& g) {
                t.gradref(ix) += g * op->transpose();
              });
}

Tape::Var Tape::conv2d(Var x, Param& w, Param& b, int k, int stride) {
  require(cache_ != nullptr, "conv2d: tape has no sparse-op cache");
  const int ix = x.i;
  const int h = nodes_[ix].h, wd = nodes_[ix].w;
  const int cin = static_cast<int>(value(x).rows());
  const int k2 = k * k;
  require(w.value.cols() == static_cast<long>(cin) * k2,
          "conv2d: weight/input mismatch");
  const int h2 = conv_out_dim(h, k, stride);
  const int w2 = conv_out_dim(wd, k, stride);

  std::vector<SparseOpCache::OpPtr> taps(k2);
  auto col = std::make_shared<Matrix>(static_cast<long>(cin) * k2,
                                      static_cast<long>(h2) * w2);
  Matrix tmp;
  for (int t = 0; t < k2; ++t) {
    taps[t] = cache_->conv_tap(h, wd, k, stride, t);
    tmp = value(x) * (*taps[t]);
    for (int c = 0; c < cin; ++c) col->row(c * k2 + t) = tmp.row(c);
  }
  Matrix v = w.value * (*col);
  v.colwise() += Vector(b.value.col(0));

  Param* wp = &w;
  Param* bp = &b;
  return make(std::move(v), h2, w2,
              [ix, wp, bp, col, taps, cin, k2](Tape& t, const Matrix& g) {
                auto [itw, fw] = t.param_grads.try_emplace(
                    wp, Matrix::Zero(wp->value.rows(), wp->value.cols()));
                itw->second += g * col->transpose();
                auto [itb, fb] = t.param_grads.try_emplace(
                    bp, Matrix::Zero(bp->value.rows(), bp->value.cols()));
                itb->second.col(0) += g.rowwise().sum();

                Matrix dcol = wp->value.transpose() * g;
                Matrix tmp2(cin, g.cols());
                Matrix& gx = t.gradref(ix);
                for (int tap = 0; tap < k2; ++tap) {
                  for (int c = 0; c < cin; ++c)
                    tmp2.row(c) = dcol.row(c * k2 + tap);
                  gx += tmp2 * taps[tap]->transpose();
                }
              });
}

Tape::Var Tape::batchnorm(Var x, Param& gamma, Param& beta, BnState& state,
                          bool batch_stats, double momentum, double eps) {
  const int ix = x.i;
  const long n = value(x).cols();
  Param* gp = &gamma;
  Param* bp = &beta;

  Vector mean, var;
  if (batch_stats) {
    mean = value(x).rowwise().mean();
    Matrix xc = value(x).colwise() - mean;
    var = xc.array().square().rowwise().mean();
    const double corr = n > 1 ? static_cast<double>(n) / (n - 1.0) : 1.0;
    bn_updates.emplace_back(&state, mean, Vector(var * corr), momentum);
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }
  Vector invstd = (var.array() + eps).rsqrt();
  auto xhat = std::make_shared<Matrix>(
      (value(x).colwise() - mean).array().colwise() * invstd.array());
  Matrix v = (xhat->array().colwise() * gamma.value.col(0).array()).matrix();
  v.colwise() += Vector(beta.value.col(0));

  return make(std::move(v), nodes_[ix].h, nodes_[ix].w,
              [ix, gp, bp, xhat, invstd, batch_stats, n](Tape& t,
                                                         const Matrix& g) {
                auto [itg, fg] = t.param_grads.try_emplace(
                    gp, Matrix::Zero(gp->value.rows(), gp->value.cols()));
                itg->second.col(0) +=
                    (g.array() * xhat->array()).rowwise().sum().matrix();
                auto [itb, fb] = t.param_grads.try_emplace(
                    bp, Matrix::Zero(bp->value.rows(), bp->value.cols()));
                itb->second.col(0) += g.rowwise().sum();

                Matrix dxhat = g.array().colwise() * gp->value.col(0).array();
                Matrix& gx = t.gradref(ix);
                if (batch_stats) {
                  Vector m1 = dxhat.rowwise().mean();
                  Vector m2 = (dxhat.array() * xhat->array()).rowwise().mean();
                  Matrix centered =
                      (dxhat.colwise() - m1).array() -
                      (xhat->array().colwise() * m2.array());
                  gx += (centered.array().colwise() * invstd.array()).matrix();
                } else {
                  gx += (dxhat.array().colwise() * invstd.array()).matrix();
                }
              });
}

Tape::Var Tape::upsample2(Var x) {
  require(cache_ != nullptr, "upsample2: tape has no sparse-op cache");
  const int h = nodes_[x.i].h, w = nodes_[x.i].w;
  return sparse_right(x, cache_->upsample2(h, w), 2 * h, 2 * w);
}

Tape::Var Tape::bce_with_logits(Var z, const RowVector& target) {
  require(value(z).rows() == 1 && value(z).cols() == target.size(),
          "bce_with_logits: shape mismatch");
  const int iz = z.i;
  const long n = target.size();
  const auto za = value(z).row(0).array();
  const double loss = (za.max(0.0) - za * target.array() +
                       (1.0 + (-za.abs()).exp()).log())
                          .mean();
  RowVector y = target;
  return make(Matrix::Constant(1, 1, loss), 0, 0,
              [iz, y, n](Tape& t, const Matrix& g) {
                const auto za = t.nodes_[iz].value.row(0).array();
                RowVector sig = (1.0 + (-za).exp()).inverse();
                t.gradref(iz).row(0) +=
                    (g(0, 0) / n) * (sig - y);
              });
}

Tape::Var Tape::dice(Var prob, const RowVector& target, double smooth) {
  require(value(prob).rows() == 1 && value(prob).cols() == target.size(),
          "dice: shape mismatch");
  const int ip = prob.i;
  const double inter = (value(prob).row(0).array() * target.array()).sum();
  const double a = 2.0 * inter + smooth;
  const double b = value(prob).sum() + target.sum() + smooth;
  RowVector y = target;
  return make(Matrix::Constant(1, 1, 1.0 - a / b), 0, 0,
              [ip, y, a, b](Tape& t, const Matrix& g) {
                t.gradref(ip).row(0) +=
                    g(0, 0) * ((a - 2.0 * b * y.array()) / (b * b)).matrix();
              });
}

Tape::Var Tape::comparative(Var f0, Var f1, const RowVector& target,
                            double gamma, bool margin_form) {
  require(value(f0).rows() == value(f1).rows() &&
              value(f0).cols() == value(f1).cols() &&
              value(f0).cols() == target.size(),
          "comparative: shape mismatch");
  const int i0 = f0.i, i1 = f1.i;
  const long n = target.size();
  double loss = 0.0;
  RowVector coef(n);  // dL/dd per pixel (before the 1/n factor)
  for (long p = 0; p < n; ++p) {
    const double d = (value(f0).col(p) - value(f1).col(p)).norm();
    const double y = target(p);
    if (margin_form) {
      loss += y * std::max(gamma - d, 0.0) + (1.0 - y) * d;
      coef(p) = y * (d < gamma ? -1.0 : 0.0) + (1.0 - y);
    } else {
      loss += y * std::max(d - gamma, 0.0) + (1.0 - y) * d;
      coef(p) = y * (d > gamma ? 1.0 : 0.0) + (1.0 - y);
    }
  }
  return make(Matrix::Constant(1, 1, loss / n), 0, 0,
              [i0, i1, coef, n](Tape& t, const Matrix& g) {
                const Matrix& a = t.nodes_[i0].value;
                const Matrix& b = t.nodes_[i1].value;
                Matrix& g0 = t.gradref(i0);
                Matrix& g1 = t.gradref(i1);
                for (long p = 0; p < n; ++p) {
                  const Vector diff = a.col(p) - b.col(p);
                  const double d = diff.norm();
                  if (d == 0.0) continue;  // subgradient 0 at the kink
                  const Vector dd = (g(0, 0) * coef(p) / (n * d)) * diff;
                  g0.col(p) += dd;
                  g1.col(p) -= dd;
                }
              });
}

Tape::Var Tape::weighted_sum(const std::vector<Var>& parts,
                             const std::vector<double>& weights) {
  require(parts.size() == weights.size() && !parts.empty(),
          "weighted_sum: size mismatch");
  double v = 0.0;
  std::vector<int> ids;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    v += weights[i] * value(parts[i])(0, 0);
    ids.push_back(parts[i].i);
  }
  auto w = weights;
  return make(Matrix::Constant(1, 1, v), 0, 0,
              [ids, w](Tape& t, const Matrix& g) {
                for (std::size_t i = 0; i < ids.size(); ++i)
                  t.gradref(ids[i]) += w[i] * g;
              });
}

void Tape::backward(Var loss) {
  require(loss.valid(), "backward: invalid loss node");
  gradref(loss.i).setConstant(1.0);
  for (int i = loss.i; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && n.grad.size() != 0) n.back(*this, n.grad);
  }
}

}  // namespace apd::ad
