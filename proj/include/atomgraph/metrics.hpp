#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "atomgraph/error.hpp"

namespace atomgraph::metrics {

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Binary detection metrics with label 1 (defective) as the positive class.
/// Any ratio with a zero denominator is reported as 0 and flagged.
struct EvalReport {
  Confusion confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double fpr = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  bool fpr_undefined = false;
  std::string strategy;
  std::vector<double> per_contract_seconds;
};

inline EvalReport report_from_confusion(const Confusion& c) {
  EvalReport r;
  r.confusion = c;
  auto ratio = [](std::size_t num, std::size_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  bool unused = false;
  r.accuracy = ratio(c.tp + c.tn, c.total(), unused);
  r.precision = ratio(c.tp, c.tp + c.fp, r.precision_undefined);
  r.recall = ratio(c.tp, c.tp + c.fn, r.recall_undefined);
  r.fpr = ratio(c.fp, c.fp + c.tn, r.fpr_undefined);
  r.f1_undefined = r.precision + r.recall <= 0.0;
  r.f1 = r.f1_undefined ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

inline EvalReport compute_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw Error(Errc::LengthMismatch, "predictions and labels differ in length");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i];
    const int y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) throw Error(Errc::InvalidLabel, "metrics expect binary values");
    if (p == 1 && y == 1) ++c.tp;
    if (p == 1 && y == 0) ++c.fp;
    if (p == 0 && y == 0) ++c.tn;
    if (p == 0 && y == 1) ++c.fn;
  }
  return report_from_confusion(c);
}

}  // namespace atomgraph::metrics
