#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

namespace gctaf {

// Binary confusion counts with the flare class (1) as positive.
struct ConfusionMatrix {
  uint64_t tp = 0;
  uint64_t fp = 0;
  uint64_t fn = 0;
  uint64_t tn = 0;

  uint64_t total() const { return tp + fp + fn + tn; }
  void add(const ConfusionMatrix& other) {
    tp += other.tp;
    fp += other.fp;
    fn += other.fn;
    tn += other.tn;
  }
};

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels);

// Skill scores return nullopt when a denominator vanishes so aggregation can
// skip-and-flag instead of silently biasing means.
//
//   tss  = tp/(tp+fn) - fp/(fp+tn)
//   hss2 = 2 (tp tn - fn fp) / ((tp+fn)(fn+tn) + (tp+fp)(fp+tn))
//   gs   = (tp - ch) / (tp + fp + fn - ch),  ch = (tp+fp)(tp+fn)/total
std::optional<double> tss(const ConfusionMatrix& cm);
std::optional<double> hss2(const ConfusionMatrix& cm);
std::optional<double> gs(const ConfusionMatrix& cm);
std::optional<double> accuracy(const ConfusionMatrix& cm);

struct MetricsReport {
  ConfusionMatrix counts;
  std::optional<double> accuracy, hss2, gs, tss;
};

MetricsReport report(const ConfusionMatrix& cm);

struct AggregateEntry {
  std::optional<double> mean;
  std::optional<double> stdev;  // sample standard deviation; 0 when n == 1
  size_t n = 0;                 // reports with a defined value
  size_t skipped = 0;           // reports whose value was undefined
};

struct AggregateReport {
  AggregateEntry accuracy, hss2, gs, tss;
};

// Per-metric sample mean and standard deviation across train-test pairs.
AggregateReport aggregate(std::span<const MetricsReport> reports);

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AggregateReport& r);

}  // namespace gctaf
