#pragma once

#include <cstdint>

#include "apd/feature_map.hpp"

namespace apd {

/// Pixel confusion counts for the binary change class (change = positive).
/// Value-semantic and mergeable; workers accumulate privately and merge.
struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
};

struct MetricSummary {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double iou = 0.0;
  ConfusionCounts counts;
  bool degenerate_precision = false;
  bool degenerate_recall = false;
  bool degenerate_f1 = false;
  bool degenerate_iou = false;
};

inline ConfusionCounts accumulate(const LabelMap& pred, const LabelMap& label,
                                  ConfusionCounts acc = {}) {
  require(pred.height == label.height && pred.width == label.width,
          "accumulate: shape mismatch");
  for (int p = 0; p < pred.pixels(); ++p) {
    const bool y_hat = pred.data(p) != 0.0;
    const bool y = label.data(p) != 0.0;
    if (y_hat && y)
      ++acc.tp;
    else if (y_hat && !y)
      ++acc.fp;
    else if (!y_hat && y)
      ++acc.fn;
    else
      ++acc.tn;
  }
  return acc;
}

inline ConfusionCounts merge(const ConfusionCounts& a,
                             const ConfusionCounts& b) {
  return {a.tp + b.tp, a.fp + b.fp, a.fn + b.fn, a.tn + b.tn};
}

/// Pooled single-class metrics. Any 0/0 ratio is reported as 0 with its
/// degenerate flag set rather than thrown.
inline MetricSummary summarize(const ConfusionCounts& c) {
  MetricSummary s;
  s.counts = c;
  const double tp = static_cast<double>(c.tp);
  if (c.tp + c.fp == 0) {
    s.degenerate_precision = true;
  } else {
    s.precision = tp / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn == 0) {
    s.degenerate_recall = true;
  } else {
    s.recall = tp / static_cast<double>(c.tp + c.fn);
  }
  if (s.precision + s.recall == 0.0) {
    s.degenerate_f1 = true;
  } else {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  if (c.tp + c.fp + c.fn == 0) {
    s.degenerate_iou = true;
  } else {
    s.iou = tp / static_cast<double>(c.tp + c.fp + c.fn);
  }
  return s;
}

}  // namespace apd
