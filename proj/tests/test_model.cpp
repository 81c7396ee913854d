#include <doctest.h>

#include "apd/model.hpp"
#include "apd/rng.hpp"

using namespace apd;
using ad::Tape;

namespace {

FeatureMap random_image(int h, int w, Rng& rng) {
  FeatureMap f(3, h, w);
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < h * w; ++p) f.data(c, p) = rng.uniform();
  return f;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.encoder.stages = 2;
  cfg.encoder.widths = {3, 4};
  cfg.context = ContextConfig{1, 1, 2, 256};
  return cfg;
}

LabelMap random_label(int h, int w, Rng& rng) {
  LabelMap y(h, w);
  for (int p = 0; p < h * w; ++p) y.data(p) = rng.bernoulli(0.3);
  return y;
}

}  // namespace

TEST_CASE("stage resolutions halve at every level down to input/2^N") {
  ModelConfig cfg;  // defaults: 4 stages, widths 16..128
  ApdModel model(cfg, 1);
  Rng rng(2);
  const FeatureMap x0 = random_image(64, 64, rng);
  const FeatureMap x1 = random_image(64, 64, rng);
  Tape t(&model.op_cache());
  const ForwardOutput out =
      model.forward(t, x0, x1, NormMode::kRunningStats, nullptr);
  REQUIRE(out.stages.size() == 4);
  const int want_h[] = {32, 16, 8, 4};
  for (int l = 0; l < 4; ++l) {
    CHECK(out.stages[l].h == want_h[l]);
    CHECK(out.stages[l].w == want_h[l]);
    CHECK(t.value(out.stages[l].diff).rows() == cfg.encoder.widths[l]);
  }
  CHECK(t.height(out.logit) == 64);
  CHECK(t.width(out.logit) == 64);
  CHECK(t.value(out.prob).minCoeff() > 0.0);
  CHECK(t.value(out.prob).maxCoeff() < 1.0);
}

TEST_CASE("identical inputs yield exactly zero differences at every stage") {
  ModelConfig cfg = tiny_config();
  ApdModel model(cfg, 3);
  Rng rng(4);
  const FeatureMap x = random_image(16, 16, rng);
  Tape t(&model.op_cache());
  const ForwardOutput out =
      model.forward(t, x, x, NormMode::kRunningStats, nullptr);
  for (const auto& so : out.stages) {
    CHECK(t.value(so.diff).cwiseAbs().maxCoeff() == 0.0);
    CHECK((t.value(so.f0_hat) - t.value(so.f1_hat)).cwiseAbs().maxCoeff() ==
          0.0);
  }
  CHECK((t.value(out.f0_terminal) - t.value(out.f1_terminal))
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("the two streams share every encoder weight") {
  ModelConfig cfg = tiny_config();
  cfg.ablation.alignment = false;
  cfg.ablation.perturbation = false;
  ApdModel model(cfg, 5);
  Rng rng(6);
  const FeatureMap x0 = random_image(16, 16, rng);
  const FeatureMap x1 = random_image(16, 16, rng);

  Tape t(&model.op_cache());
  const ForwardOutput out =
      model.forward(t, x0, x1, NormMode::kRunningStats, nullptr);
  const std::vector<Matrix> solo0 =
      model.single_stream_features(x0, NormMode::kRunningStats);
  const std::vector<Matrix> solo1 =
      model.single_stream_features(x1, NormMode::kRunningStats);
  for (std::size_t l = 0; l < out.stages.size(); ++l) {
    CHECK((t.value(out.stages[l].f0_hat) - solo0[l]).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK((t.value(out.stages[l].f1_hat) - solo1[l]).cwiseAbs().maxCoeff() ==
          0.0);
  }
}

TEST_CASE("inference is deterministic") {
  ModelConfig cfg = tiny_config();
  ApdModel model(cfg, 7);
  Rng rng(8);
  const FeatureMap x0 = random_image(16, 16, rng);
  const FeatureMap x1 = random_image(16, 16, rng);
  Tape t1(&model.op_cache()), t2(&model.op_cache());
  const ForwardOutput a =
      model.forward(t1, x0, x1, NormMode::kRunningStats, nullptr);
  const ForwardOutput b =
      model.forward(t2, x0, x1, NormMode::kRunningStats, nullptr);
  CHECK((t1.value(a.logit) - t2.value(b.logit)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("an all-plus-one perturbation is bit-identical to inference") {
  ModelConfig cfg = tiny_config();
  ApdModel model(cfg, 9);
  Rng rng(10);
  const FeatureMap x0 = random_image(16, 16, rng);
  const FeatureMap x1 = random_image(16, 16, rng);

  std::vector<PerturbationVector> ones;
  for (int w : cfg.encoder.widths) {
    PerturbationVector v;
    v.values = Vector::Ones(w);
    ones.push_back(v);
  }
  Tape ti(&model.op_cache()), tp(&model.op_cache());
  const ForwardOutput inf =
      model.forward(ti, x0, x1, NormMode::kRunningStats, nullptr);
  const ForwardOutput per =
      model.forward(tp, x0, x1, NormMode::kRunningStats, &ones);
  CHECK((ti.value(inf.logit) - tp.value(per.logit)).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((ti.value(inf.prob) - tp.value(per.prob)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("disabling perturbation fixes the coarse mask at one") {
  ModelConfig cfg = tiny_config();
  cfg.ablation.perturbation = false;
  ApdModel model(cfg, 11);
  Rng rng(12);
  const FeatureMap x0 = random_image(16, 16, rng);
  const FeatureMap x1 = random_image(16, 16, rng);
  Tape t(&model.op_cache());
  const ForwardOutput out =
      model.forward(t, x0, x1, NormMode::kRunningStats, nullptr);
  for (const auto& so : out.stages) {
    CHECK((t.value(so.mask).array() - 1.0).abs().maxCoeff() == 0.0);
    CHECK_FALSE(so.mask_logit.valid());
    CHECK((t.value(so.diff) - (t.value(so.f0_hat) - t.value(so.f1_hat)))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  const LabelMap y = random_label(16, 16, rng);
  const LossOutput lo = model.losses(t, out, y, LossConfig{});
  CHECK(lo.deep.empty());
}

TEST_CASE("a single decoder replaces the pair when decoupling is off") {
  ModelConfig cfg = tiny_config();
  cfg.ablation.decoupling = false;
  ApdModel model(cfg, 13);
  CHECK(model.params().find("dec.single.entry.w") != nullptr);
  CHECK(model.params().find("dec.aw.entry.w") == nullptr);
  CHECK(model.params().find("dec.ag.entry.w") == nullptr);
  // entry consumes cat(F0, F1, O): three terminal widths
  CHECK(model.params().find("dec.single.entry.w")->value.cols() ==
        3 * cfg.encoder.widths.back());

  Rng rng(14);
  const FeatureMap x0 = random_image(16, 16, rng);
  const FeatureMap x1 = random_image(16, 16, rng);
  Tape t(&model.op_cache());
  const ForwardOutput out =
      model.forward(t, x0, x1, NormMode::kRunningStats, nullptr);
  CHECK(t.height(out.logit) == 16);
}

TEST_CASE("losses wire the configured weights into the total") {
  ModelConfig cfg = tiny_config();
  ApdModel model(cfg, 15);
  Rng rng(16);
  const FeatureMap x0 = random_image(16, 16, rng);
  const FeatureMap x1 = random_image(16, 16, rng);
  const LabelMap y = random_label(16, 16, rng);
  Tape t(&model.op_cache());
  const ForwardOutput out =
      model.forward(t, x0, x1, NormMode::kRunningStats, nullptr);
  LossConfig lc;
  lc.lambda1 = 0.5;
  lc.lambda2 = 2.0;
  const LossOutput lo = model.losses(t, out, y, lc);
  double deep_sum = 0.0;
  for (auto d : lo.deep) deep_sum += t.value(d)(0, 0);
  const double want = t.value(lo.change)(0, 0) + 0.5 * deep_sum +
                      2.0 * t.value(lo.comparative)(0, 0);
  CHECK(t.value(lo.total)(0, 0) == doctest::Approx(want).epsilon(1e-12));

  lc.lambda1 = 0.0;
  lc.lambda2 = 0.0;
  Tape t2(&model.op_cache());
  const ForwardOutput out2 =
      model.forward(t2, x0, x1, NormMode::kRunningStats, nullptr);
  const LossOutput lo2 = model.losses(t2, out2, y, lc);
  CHECK(t2.value(lo2.total)(0, 0) ==
        doctest::Approx(t2.value(lo2.change)(0, 0)).epsilon(1e-12));
}

TEST_CASE("end-to-end gradients pass finite differences on a tiny model") {
  ModelConfig cfg = tiny_config();
  ApdModel model(cfg, 17);
  Rng rng(18);
  const FeatureMap x0 = random_image(8, 8, rng);
  const FeatureMap x1 = random_image(8, 8, rng);
  const LabelMap y = random_label(8, 8, rng);
  Rng prng(19);
  const std::vector<PerturbationVector> vs =
      model.sample_stage_perturbations(prng);
  LossConfig lc;

  auto loss_value = [&](Tape& t) {
    const ForwardOutput out =
        model.forward(t, x0, x1, NormMode::kBatchStats, &vs);
    const LossOutput lo = model.losses(t, out, y, lc);
    return lo.total;
  };

  Tape base(&model.op_cache());
  const Tape::Var total = loss_value(base);
  base.backward(total);

  const double eps = 1e-5;
  const char* names[] = {"enc.s1.entry.w", "enc.s1.align.w", "enc.s1.mask.w1",
                         "enc.s2.conv2.gamma", "dec.aw.entry.w",
                         "dec.ag.l2.projo.w", "dec.aw.head.w", "dec.ag.head.b"};
  for (const char* name : names) {
    CAPTURE(name);
    ad::Param* p = model.params().find(name);
    REQUIRE(p != nullptr);
    REQUIRE(base.param_grads.count(p) == 1);
    const Matrix& grad = base.param_grads.at(p);
    const int checks = std::min<long>(4, p->value.size());
    for (int k = 0; k < checks; ++k) {
      const int i = k % static_cast<int>(p->value.rows());
      const int j = k / static_cast<int>(p->value.rows());
      const double keep = p->value(i, j);
      p->value(i, j) = keep + eps;
      Tape tp(&model.op_cache());
      const double fp = tp.value(loss_value(tp))(0, 0);
      p->value(i, j) = keep - eps;
      Tape tm(&model.op_cache());
      const double fm = tm.value(loss_value(tm))(0, 0);
      p->value(i, j) = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double denom = std::max({std::abs(fd), std::abs(grad(i, j)), 1e-4});
      CHECK(std::abs(fd - grad(i, j)) / denom < 1e-3);
    }
  }
}
