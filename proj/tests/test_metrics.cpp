#include <doctest.h>

#include <random>

#include "apd/metrics.hpp"

using namespace apd;

TEST_CASE("accumulate counts a hand-checked pair") {
  LabelMap pred(2, 2), label(2, 2);
  pred.at(0, 0) = 1;  // tp
  label.at(0, 0) = 1;
  pred.at(0, 1) = 1;  // fp
  label.at(1, 0) = 1;  // fn
  // (1,1) tn
  const ConfusionCounts c = accumulate(pred, label);
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.tn == 1);
  CHECK(c.total() == 4);
}

TEST_CASE("accumulate rejects mismatched shapes") {
  LabelMap pred(2, 2), label(2, 3);
  CHECK_THROWS_AS(accumulate(pred, label), std::invalid_argument);
}

TEST_CASE("merge is elementwise addition") {
  const ConfusionCounts a{1, 2, 3, 4}, b{10, 20, 30, 40};
  const ConfusionCounts m = merge(a, b);
  CHECK(m.tp == 11);
  CHECK(m.fp == 22);
  CHECK(m.fn == 33);
  CHECK(m.tn == 44);
}

TEST_CASE("summarize matches independent formulas on random counts") {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<std::uint64_t> dist(0, 5000);
  for (int i = 0; i < 300; ++i) {
    ConfusionCounts c{dist(gen), dist(gen), dist(gen), dist(gen)};
    const MetricSummary s = summarize(c);
    const double tp = static_cast<double>(c.tp);
    const double fp = static_cast<double>(c.fp);
    const double fn = static_cast<double>(c.fn);
    if (c.tp + c.fp > 0) CHECK(s.precision == doctest::Approx(tp / (tp + fp)));
    if (c.tp + c.fn > 0) CHECK(s.recall == doctest::Approx(tp / (tp + fn)));
    if (c.tp > 0) {
      CHECK(s.f1 ==
            doctest::Approx(2.0 * tp / (2.0 * tp + fp + fn)).epsilon(1e-12));
      CHECK(s.iou == doctest::Approx(tp / (tp + fp + fn)).epsilon(1e-12));
      // F1 and IoU are tied for pooled counts
      CHECK(std::abs(s.iou - s.f1 / (2.0 - s.f1)) < 1e-12);
    }
  }
}

TEST_CASE("degenerate ratios report 0 with flags, never NaN") {
  const MetricSummary s = summarize({0, 0, 0, 10});
  CHECK(s.precision == 0.0);
  CHECK(s.recall == 0.0);
  CHECK(s.f1 == 0.0);
  CHECK(s.iou == 0.0);
  CHECK(s.degenerate_precision);
  CHECK(s.degenerate_recall);
  CHECK(s.degenerate_f1);
  CHECK(s.degenerate_iou);

  const MetricSummary t = summarize({0, 5, 0, 0});
  CHECK(t.precision == 0.0);
  CHECK_FALSE(t.degenerate_precision);
  CHECK(t.degenerate_recall);
  CHECK(t.degenerate_f1);
  CHECK_FALSE(t.degenerate_iou);
  CHECK(t.iou == 0.0);
}

TEST_CASE("published F1/IoU pair is self-consistent") {
  const double f1 = 0.9171;
  const double iou = f1 / (2.0 - f1);
  CHECK(std::abs(iou * 100.0 - 84.69) < 0.005);
}
