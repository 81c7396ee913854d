#include <doctest.h>

#include <functional>

#include "apd/autodiff.hpp"
#include "apd/rng.hpp"

using namespace apd;
using ad::Tape;

namespace {

Matrix randn(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// central-difference check of d(scalar)/d(param) for every entry of every
// listed parameter; the builder must evaluate the graph from current values
// and call backward itself
double check_param_grads(const std::function<double(Tape&)>& scalar_of,
                         std::vector<ad::Param*> params, double eps = 1e-5) {
  ad::SparseOpCache cache;
  double worst = 0.0;
  for (ad::Param* p : params) {
    Tape t(&cache);
    (void)scalar_of(t);
    const Matrix grad = t.param_grads.count(p)
                            ? t.param_grads.at(p)
                            : Matrix::Zero(p->value.rows(), p->value.cols());
    for (int i = 0; i < p->value.rows(); ++i)
      for (int j = 0; j < p->value.cols(); ++j) {
        const double keep = p->value(i, j);
        p->value(i, j) = keep + eps;
        Tape tp(&cache);
        const double fp = scalar_of(tp);
        p->value(i, j) = keep - eps;
        Tape tm(&cache);
        const double fm = scalar_of(tm);
        p->value(i, j) = keep;
        const double fd = (fp - fm) / (2.0 * eps);
        const double denom =
            std::max({std::abs(fd), std::abs(grad(i, j)), 1e-4});
        worst = std::max(worst, std::abs(fd - grad(i, j)) / denom);
      }
  }
  return worst;
}

double run_loss(Tape& t, Tape::Var logit, const RowVector& target) {
  const Tape::Var loss = t.bce_with_logits(logit, target);
  t.backward(loss);
  return t.value(loss)(0, 0);
}

}  // namespace

TEST_CASE("gradients of elementwise and shaping ops pass finite differences") {
  Rng rng(101);
  ad::ParamStore store;
  ad::Param& a = store.add("a", 3, 8);
  ad::Param& b = store.add("b", 3, 8);
  ad::Param& reduce = store.add("reduce", 1, 3);
  ad::Param& reduce6 = store.add("reduce6", 1, 6);
  a.value = randn(3, 8, rng).array() + 0.3;  // keep relu off its kink
  b.value = randn(3, 8, rng).array() + 0.3;
  reduce.value = randn(1, 3, rng);
  reduce6.value = randn(1, 6, rng);
  RowVector target(8);
  for (int i = 0; i < 8; ++i) target(i) = rng.bernoulli(0.5);

  Vector scale(3);
  scale << -1.0, 0.0, 1.0;

  SUBCASE("add, relu, sigmoid") {
    auto f = [&](Tape& t) {
      Tape::Var x = t.add(t.param(a, 2, 4), t.param(b, 2, 4));
      x = t.sigmoid(t.relu(x));
      return run_loss(t, t.linear(x, reduce), target);
    };
    CHECK(check_param_grads(f, {&a, &b, &reduce}) < 1e-3);
  }

  SUBCASE("sub and scale_channels") {
    auto f = [&](Tape& t) {
      Tape::Var x = t.sub(t.param(a, 2, 4), t.param(b, 2, 4));
      x = t.scale_channels(x, scale);
      return run_loss(t, t.linear(x, reduce), target);
    };
    CHECK(check_param_grads(f, {&a, &b}) < 1e-3);
  }

  SUBCASE("concat_rows and gap_broadcast") {
    auto f = [&](Tape& t) {
      Tape::Var x = t.concat_rows(t.param(a, 2, 4), t.param(b, 2, 4));
      return run_loss(t, t.linear(t.gap_broadcast(x), reduce6), target);
    };
    CHECK(check_param_grads(f, {&a, &b, &reduce6}) < 1e-3);
  }
}

TEST_CASE("bce with logits backward passes finite differences") {
  Rng rng(57);
  ad::ParamStore store;
  ad::Param& z = store.add("z", 1, 6);
  z.value = randn(1, 6, rng);
  RowVector y(6);
  y << 1, 0, 1, 1, 0, 0;
  auto f = [&](Tape& t) { return run_loss(t, t.param(z, 2, 3), y); };
  CHECK(check_param_grads(f, {&z}) < 1e-3);
}

TEST_CASE("rowvec_mul backward passes finite differences for both factors") {
  Rng rng(58);
  ad::ParamStore store;
  ad::Param& x = store.add("x", 4, 6);
  ad::Param& m = store.add("m", 1, 6);
  ad::Param& reduce = store.add("reduce", 1, 4);
  x.value = randn(4, 6, rng);
  m.value = randn(1, 6, rng);
  reduce.value = randn(1, 4, rng);
  RowVector y(6);
  y << 0, 1, 0, 1, 1, 0;
  auto f = [&](Tape& t) {
    Tape::Var prod = t.rowvec_mul(t.param(x, 2, 3), t.param(m, 2, 3));
    return run_loss(t, t.linear(prod, reduce), y);
  };
  CHECK(check_param_grads(f, {&x, &m}) < 1e-3);
}

TEST_CASE("linear backward passes finite differences") {
  Rng rng(59);
  ad::ParamStore store;
  ad::Param& x = store.add("x", 5, 6);
  ad::Param& w = store.add("w", 1, 5);
  ad::Param& b = store.add("b", 1, 1);
  x.value = randn(5, 6, rng);
  w.value = randn(1, 5, rng);
  b.value = randn(1, 1, rng);
  RowVector y(6);
  y << 1, 1, 0, 0, 1, 0;
  auto f = [&](Tape& t) {
    return run_loss(t, t.linear(t.param(x, 2, 3), w, &b), y);
  };
  CHECK(check_param_grads(f, {&x, &w, &b}) < 1e-3);
}

TEST_CASE("conv2d backward passes finite differences") {
  Rng rng(60);
  ad::ParamStore store;
  ad::Param& x = store.add("x", 2, 16);  // 2 channels, 4x4
  ad::Param& w = store.add("w", 3, 2 * 9);
  ad::Param& b = store.add("b", 3, 1);
  ad::Param& reduce = store.add("reduce", 1, 3);
  x.value = randn(2, 16, rng);
  w.value = randn(3, 18, rng) * 0.5;
  b.value = randn(3, 1, rng) * 0.1;
  reduce.value = randn(1, 3, rng);

  for (int stride : {1, 2}) {
    CAPTURE(stride);
    const int out = ad::conv_out_dim(4, 3, stride);
    RowVector y = RowVector::Zero(out * out);
    for (int i = 0; i < y.size(); ++i) y(i) = rng.bernoulli(0.5);
    auto f = [&](Tape& t) {
      Tape::Var c = t.conv2d(t.param(x, 4, 4), w, b, 3, stride);
      return run_loss(t, t.linear(c, reduce), y);
    };
    CHECK(check_param_grads(f, {&x, &w, &b}) < 1e-3);
  }
}

TEST_CASE("batchnorm backward passes finite differences in batch mode") {
  Rng rng(61);
  ad::ParamStore store;
  ad::Param& x = store.add("x", 3, 9);
  ad::Param& gamma = store.add("gamma", 3, 1);
  ad::Param& beta = store.add("beta", 3, 1);
  ad::Param& reduce = store.add("reduce", 1, 3);
  x.value = randn(3, 9, rng);
  gamma.value = randn(3, 1, rng).array() + 1.5;
  beta.value = randn(3, 1, rng) * 0.2;
  reduce.value = randn(1, 3, rng);
  ad::BnState bn{"bn", Vector::Zero(3), Vector::Ones(3)};
  RowVector y(9);
  for (int i = 0; i < 9; ++i) y(i) = rng.bernoulli(0.5);
  auto f = [&](Tape& t) {
    Tape::Var v = t.batchnorm(t.param(x, 3, 3), gamma, beta, bn, true);
    return run_loss(t, t.linear(v, reduce), y);
  };
  CHECK(check_param_grads(f, {&x, &gamma, &beta}) < 1e-3);
}

TEST_CASE("batchnorm in running-stats mode is a per-channel affine map") {
  Rng rng(67);
  ad::SparseOpCache cache;
  ad::ParamStore store;
  ad::Param& gamma = store.add("gamma", 2, 1);
  ad::Param& beta = store.add("beta", 2, 1);
  gamma.value << 2.0, 0.5;
  beta.value << 1.0, -1.0;
  ad::BnState bn{"bn", Vector::Zero(2), Vector::Ones(2)};
  bn.running_mean << 0.5, -0.5;
  bn.running_var << 4.0, 0.25;
  Tape t(&cache);
  Matrix xv = randn(2, 4, rng);
  Tape::Var v = t.batchnorm(t.input(xv, 2, 2), gamma, beta, bn, false);
  const double eps = 1e-5;
  for (int c = 0; c < 2; ++c)
    for (int p = 0; p < 4; ++p) {
      const double want = gamma.value(c, 0) * (xv(c, p) - bn.running_mean(c)) /
                              std::sqrt(bn.running_var(c) + eps) +
                          beta.value(c, 0);
      CHECK(t.value(v)(c, p) == doctest::Approx(want).epsilon(1e-10));
    }
  CHECK(t.bn_updates.empty());
}

TEST_CASE("batch-mode batchnorm queues a running-stats update") {
  ad::SparseOpCache cache;
  ad::ParamStore store;
  ad::Param& gamma = store.add("gamma", 1, 1);
  ad::Param& beta = store.add("beta", 1, 1);
  gamma.value << 1.0;
  beta.value << 0.0;
  ad::BnState bn{"bn", Vector::Zero(1), Vector::Ones(1)};
  Tape t(&cache);
  Matrix xv(1, 4);
  xv << 1.0, 2.0, 3.0, 6.0;  // mean 3, unbiased var 14/3
  (void)t.batchnorm(t.input(xv, 2, 2), gamma, beta, bn, true);
  REQUIRE(t.bn_updates.size() == 1);
  const auto& [state, mean, var, momentum] = t.bn_updates[0];
  CHECK(state == &bn);
  CHECK(mean(0) == doctest::Approx(3.0));
  CHECK(var(0) == doctest::Approx(14.0 / 3.0));
  CHECK(momentum == doctest::Approx(0.1));
}

TEST_CASE("upsample2 backward passes finite differences") {
  Rng rng(62);
  ad::ParamStore store;
  ad::Param& x = store.add("x", 2, 9);
  ad::Param& reduce = store.add("reduce", 1, 2);
  x.value = randn(2, 9, rng);
  reduce.value = randn(1, 2, rng);
  RowVector y = RowVector::Zero(36);
  for (int i = 0; i < 36; ++i) y(i) = rng.bernoulli(0.5);
  auto f = [&](Tape& t) {
    Tape::Var u = t.upsample2(t.param(x, 3, 3));
    return run_loss(t, t.linear(u, reduce), y);
  };
  CHECK(check_param_grads(f, {&x, &reduce}) < 1e-3);
}

TEST_CASE("upsample2 preserves constant maps exactly") {
  ad::SparseOpCache cache;
  Tape t(&cache);
  Matrix xv = Matrix::Constant(3, 25, 0.7);
  Tape::Var u = t.upsample2(t.input(xv, 5, 5));
  CHECK(t.height(u) == 10);
  CHECK(t.width(u) == 10);
  CHECK((t.value(u).array() - 0.7).abs().maxCoeff() < 1e-12);
}

TEST_CASE("sparse_right applies a constant operator") {
  ad::SparseOpCache cache;
  Tape t(&cache);
  // identity tap of a 3x3 stride-1 convolution is the center tap (index 4)
  auto op = cache.conv_tap(3, 3, 3, 1, 4);
  Matrix xv(2, 9);
  xv.setRandom();
  Tape::Var v = t.sparse_right(t.input(xv, 3, 3), op, 3, 3);
  CHECK((t.value(v) - xv).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dice and comparative nodes pass finite differences") {
  Rng rng(63);
  ad::ParamStore store;
  ad::Param& z = store.add("z", 1, 8);
  z.value = randn(1, 8, rng);
  RowVector y(8);
  y << 1, 0, 0, 1, 1, 0, 1, 0;
  SUBCASE("dice on sigmoid probabilities") {
    auto f = [&](Tape& t) {
      Tape::Var loss = t.dice(t.sigmoid(t.param(z, 2, 4)), y);
      t.backward(loss);
      return t.value(loss)(0, 0);
    };
    CHECK(check_param_grads(f, {&z}) < 1e-3);
  }

  ad::Param& f0 = store.add("f0", 3, 8);
  ad::Param& f1 = store.add("f1", 3, 8);
  f0.value = randn(3, 8, rng);
  f1.value = randn(3, 8, rng);
  SUBCASE("comparative, margin form") {
    auto f = [&](Tape& t) {
      Tape::Var loss =
          t.comparative(t.param(f0, 2, 4), t.param(f1, 2, 4), y, 1.0, true);
      t.backward(loss);
      return t.value(loss)(0, 0);
    };
    CHECK(check_param_grads(f, {&f0, &f1}) < 1e-3);
  }
  SUBCASE("comparative, literal form") {
    auto f = [&](Tape& t) {
      Tape::Var loss =
          t.comparative(t.param(f0, 2, 4), t.param(f1, 2, 4), y, 0.5, false);
      t.backward(loss);
      return t.value(loss)(0, 0);
    };
    CHECK(check_param_grads(f, {&f0, &f1}) < 1e-3);
  }
}

TEST_CASE("weighted_sum combines scalar nodes linearly") {
  Rng rng(64);
  ad::ParamStore store;
  ad::Param& z = store.add("z", 1, 4);
  z.value = randn(1, 4, rng);
  RowVector y(4);
  y << 1, 0, 1, 0;
  auto f = [&](Tape& t) {
    Tape::Var a = t.bce_with_logits(t.param(z, 2, 2), y);
    Tape::Var b = t.dice(t.sigmoid(t.param(z, 2, 2)), y);
    Tape::Var s = t.weighted_sum({a, b}, {0.7, 2.0});
    t.backward(s);
    return t.value(s)(0, 0);
  };
  CHECK(check_param_grads(f, {&z}) < 1e-3);

  ad::SparseOpCache cache;
  Tape t(&cache);
  Tape::Var a = t.bce_with_logits(t.input(z.value, 2, 2), y);
  Tape::Var b = t.dice(t.sigmoid(t.input(z.value, 2, 2)), y);
  Tape::Var s = t.weighted_sum({a, b}, {0.7, 2.0});
  CHECK(t.value(s)(0, 0) ==
        doctest::Approx(0.7 * t.value(a)(0, 0) + 2.0 * t.value(b)(0, 0)));
}
