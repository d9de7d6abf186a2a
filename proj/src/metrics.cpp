#include "gctaf/metrics.hpp"

#include <cmath>

#include "gctaf/errors.hpp"

namespace gctaf {

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ContractError("confusion: " + std::to_string(predictions.size()) +
                        " predictions vs " + std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix cm;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw ContractError("confusion: label " + std::to_string(labels[i]) + " at index " +
                          std::to_string(i) + " is not binary");
    }
    if (predictions[i] != 0 && predictions[i] != 1) {
      throw ContractError("confusion: prediction " + std::to_string(predictions[i]) +
                          " at index " + std::to_string(i) + " is not binary");
    }
    if (labels[i] == 1) {
      predictions[i] == 1 ? ++cm.tp : ++cm.fn;
    } else {
      predictions[i] == 1 ? ++cm.fp : ++cm.tn;
    }
  }
  return cm;
}

std::optional<double> tss(const ConfusionMatrix& cm) {
  double pos = static_cast<double>(cm.tp + cm.fn);
  double neg = static_cast<double>(cm.fp + cm.tn);
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return static_cast<double>(cm.tp) / pos - static_cast<double>(cm.fp) / neg;
}

std::optional<double> hss2(const ConfusionMatrix& cm) {
  double tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp);
  double fn = static_cast<double>(cm.fn), tn = static_cast<double>(cm.tn);
  double denom = (tp + fn) * (fn + tn) + (tp + fp) * (fp + tn);
  if (denom == 0.0) return std::nullopt;
  return 2.0 * (tp * tn - fn * fp) / denom;
}

std::optional<double> gs(const ConfusionMatrix& cm) {
  if (cm.total() == 0) return std::nullopt;
  double tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp);
  double fn = static_cast<double>(cm.fn);
  double chance = (tp + fp) * (tp + fn) / static_cast<double>(cm.total());
  double denom = tp + fp + fn - chance;
  if (denom == 0.0) return std::nullopt;
  return (tp - chance) / denom;
}

std::optional<double> accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) return std::nullopt;
  return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

MetricsReport report(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ContractError("report: empty confusion matrix");
  MetricsReport r;
  r.counts = cm;
  r.accuracy = accuracy(cm);
  r.hss2 = hss2(cm);
  r.gs = gs(cm);
  r.tss = tss(cm);
  return r;
}

static AggregateEntry aggregate_one(std::span<const MetricsReport> reports,
                                    std::optional<double> MetricsReport::* field) {
  AggregateEntry entry;
  double sum = 0.0;
  for (const auto& r : reports) {
    if ((r.*field).has_value()) {
      sum += *(r.*field);
      ++entry.n;
    } else {
      ++entry.skipped;
    }
  }
  if (entry.n == 0) return entry;
  double mean = sum / static_cast<double>(entry.n);
  entry.mean = mean;
  if (entry.n == 1) {
    entry.stdev = 0.0;
    return entry;
  }
  double ss = 0.0;
  for (const auto& r : reports) {
    if ((r.*field).has_value()) {
      double d = *(r.*field) - mean;
      ss += d * d;
    }
  }
  entry.stdev = std::sqrt(ss / static_cast<double>(entry.n - 1));
  return entry;
}

AggregateReport aggregate(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ContractError("aggregate: empty report list");
  AggregateReport out;
  out.accuracy = aggregate_one(reports, &MetricsReport::accuracy);
  out.hss2 = aggregate_one(reports, &MetricsReport::hss2);
  out.gs = aggregate_one(reports, &MetricsReport::gs);
  out.tss = aggregate_one(reports, &MetricsReport::tss);
  return out;
}

static nlohmann::json opt_json(const std::optional<double>& v) {
  if (!v.has_value()) return nullptr;
  return *v;
}

nlohmann::json to_json(const MetricsReport& r) {
  return {
      {"accuracy", opt_json(r.accuracy)},
      {"hss2", opt_json(r.hss2)},
      {"gs", opt_json(r.gs)},
      {"tss", opt_json(r.tss)},
      {"counts",
       {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}},
  };
}

static std::optional<double> opt_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  const auto& counts = j.at("counts");
  r.counts.tp = counts.at("tp").get<uint64_t>();
  r.counts.fp = counts.at("fp").get<uint64_t>();
  r.counts.fn = counts.at("fn").get<uint64_t>();
  r.counts.tn = counts.at("tn").get<uint64_t>();
  r.accuracy = opt_from_json(j.at("accuracy"));
  r.hss2 = opt_from_json(j.at("hss2"));
  r.gs = opt_from_json(j.at("gs"));
  r.tss = opt_from_json(j.at("tss"));
  return r;
}

static nlohmann::json entry_json(const AggregateEntry& e) {
  return {
      {"mean", opt_json(e.mean)},
      {"std", opt_json(e.stdev)},
      {"n", e.n},
      {"skipped", e.skipped},
  };
}

nlohmann::json to_json(const AggregateReport& r) {
  return {
      {"accuracy", entry_json(r.accuracy)},
      {"hss2", entry_json(r.hss2)},
      {"gs", entry_json(r.gs)},
      {"tss", entry_json(r.tss)},
  };
}

}  // namespace gctaf
