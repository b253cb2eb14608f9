#pragma once

#include <stdexcept>

#include "gvb/types.hpp"

namespace gvb {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

// Confusion-matrix rates at a probability threshold. Rates with an empty
// denominator are reported as zero.
inline ClassificationMetrics classification_metrics(const Vec& labels,
                                                    const Vec& probs,
                                                    double threshold = 0.5) {
  require_same_dim(labels.size(), probs.size(), "classification_metrics");
  if (labels.size() == 0)
    throw std::invalid_argument("classification_metrics: empty input");
  ClassificationMetrics m;
  for (int i = 0; i < labels.size(); ++i) {
    bool pred = probs(i) >= threshold;
    bool truth = labels(i) >= 0.5;
    if (pred && truth) ++m.tp;
    else if (pred && !truth) ++m.fp;
    else if (!pred && truth) ++m.fn;
    else ++m.tn;
  }
  const double n = static_cast<double>(labels.size());
  m.accuracy = (m.tp + m.tn) / n;
  m.precision = (m.tp + m.fp) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
  m.recall = (m.tp + m.fn) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

inline double regression_mse(const Vec& targets, const Vec& fitted) {
  require_same_dim(targets.size(), fitted.size(), "regression_mse");
  if (targets.size() == 0)
    throw std::invalid_argument("regression_mse: empty input");
  return (targets - fitted).squaredNorm() / static_cast<double>(targets.size());
}

}  // namespace gvb
