#include "gctaf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "gctaf/errors.hpp"

namespace fs = std::filesystem;

namespace gctaf {

static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* to_string(FlareClass c) {
  switch (c) {
    case FlareClass::FQ: return "FQ";
    case FlareClass::B: return "B";
    case FlareClass::C: return "C";
    case FlareClass::M: return "M";
    case FlareClass::X: return "X";
  }
  return "FQ";
}

FlareClass flare_class_from_string(const std::string& s) {
  if (s == "FQ") return FlareClass::FQ;
  if (s == "B") return FlareClass::B;
  if (s == "C") return FlareClass::C;
  if (s == "M") return FlareClass::M;
  if (s == "X") return FlareClass::X;
  throw ValidationError("unknown flare class '" + s + "' (expected FQ | B | C | M | X)");
}

// ---------------------------------------------------------------------------
// ISO-8601 UTC timestamps (civil-date arithmetic, no locale or timezone state)

static int64_t days_from_civil(int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

static void civil_from_days(int64_t z, int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += m <= 2;
}

int64_t parse_iso8601_utc(const std::string& s) {
  auto fail = [&] { throw ParseError("invalid ISO-8601 UTC timestamp '" + s + "'"); };
  if (s.size() != 20 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' ||
      s[16] != ':' || s[19] != 'Z') {
    fail();
  }
  auto digits = [&](size_t pos, size_t len) -> int {
    int value = 0;
    for (size_t i = pos; i < pos + len; ++i) {
      if (s[i] < '0' || s[i] > '9') fail();
      value = value * 10 + (s[i] - '0');
    }
    return value;
  };
  int year = digits(0, 4), month = digits(5, 2), day = digits(8, 2);
  int hour = digits(11, 2), minute = digits(14, 2), second = digits(17, 2);
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second > 59) {
    fail();
  }
  return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) * 86400 +
         hour * 3600 + minute * 60 + second;
}

std::string format_iso8601_utc(int64_t epoch_s) {
  int64_t days = epoch_s / 86400;
  int64_t rem = epoch_s % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  int64_t y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02u:%02u:%02uZ", static_cast<long long>(y),
                m, d, static_cast<unsigned>(rem / 3600), static_cast<unsigned>((rem / 60) % 60),
                static_cast<unsigned>(rem % 60));
  return buf;
}

// ---------------------------------------------------------------------------
// dataset basics

size_t Dataset::count(FlareClass c) const {
  size_t n = 0;
  for (const auto& inst : instances) n += inst.label == c ? 1 : 0;
  return n;
}

size_t Dataset::flare_count() const {
  size_t n = 0;
  for (const auto& inst : instances) n += is_flare(inst.label) ? 1 : 0;
  return n;
}

std::pair<int64_t, int64_t> Dataset::time_range() const {
  if (instances.empty()) throw ContractError("time_range of an empty dataset");
  int64_t lo = instances.front().start_epoch_s, hi = lo;
  for (const auto& inst : instances) {
    lo = std::min(lo, inst.start_epoch_s);
    hi = std::max(hi, inst.start_epoch_s);
  }
  return {lo, hi};
}

static void sort_canonical(std::vector<MvtsInstance>& instances) {
  std::stable_sort(instances.begin(), instances.end(),
                   [](const MvtsInstance& a, const MvtsInstance& b) {
                     if (a.start_epoch_s != b.start_epoch_s) {
                       return a.start_epoch_s < b.start_epoch_s;
                     }
                     return a.source_id < b.source_id;
                   });
}

// ---------------------------------------------------------------------------
// instance CSV io

static std::vector<double> read_instance_csv(const fs::path& path, size_t tau,
                                             size_t n_features) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open instance file '" + path.string() + "'");
  std::vector<double> values;
  values.reserve(tau * n_features);
  std::string line;
  size_t line_no = 0;
  size_t data_rows = 0;
  while (std::getline(file, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      size_t cols = line.empty() ? 0 : static_cast<size_t>(std::count(line.begin(), line.end(), ',')) + 1;
      if (cols != n_features) {
        throw ValidationError("instance file '" + path.string() + "' has " +
                              std::to_string(cols) + " header columns, expected " +
                              std::to_string(n_features));
      }
      continue;  // header row carries feature names only
    }
    ++data_rows;
    size_t col = 0;
    size_t begin = 0;
    while (true) {
      size_t end = line.find(',', begin);
      std::string_view cell(line.data() + begin,
                            (end == std::string::npos ? line.size() : end) - begin);
      ++col;
      if (col > n_features) {
        throw ValidationError("instance file '" + path.string() + "' line " +
                              std::to_string(line_no) + " has more than " +
                              std::to_string(n_features) + " columns");
      }
      if (cell.empty()) {
        values.push_back(kNaN);
      } else {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc() || ptr != cell.data() + cell.size()) {
          throw ParseError("bad CSV cell in '" + path.string() + "' at line " +
                           std::to_string(line_no) + ", column " + std::to_string(col));
        }
        values.push_back(v);
      }
      if (end == std::string::npos) break;
      begin = end + 1;
    }
    if (col != n_features) {
      throw ValidationError("instance file '" + path.string() + "' line " +
                            std::to_string(line_no) + " has " + std::to_string(col) +
                            " columns, expected " + std::to_string(n_features));
    }
  }
  if (data_rows != tau) {
    throw ValidationError("instance file '" + path.string() + "' has " +
                          std::to_string(data_rows) + " rows, expected tau = " +
                          std::to_string(tau));
  }
  return values;
}

static void write_instance_csv(const fs::path& path, const MvtsInstance& inst) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw IoError("cannot open '" + path.string() + "' for writing");
  for (size_t f = 0; f < inst.n_features; ++f) {
    if (f) file << ',';
    file << 'f' << f;
  }
  file << '\n';
  char buf[32];
  for (size_t t = 0; t < inst.tau; ++t) {
    for (size_t f = 0; f < inst.n_features; ++f) {
      if (f) file << ',';
      double v = inst.at(t, f);
      if (!std::isnan(v)) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        file << buf;
      }
    }
    file << '\n';
  }
  if (!file) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// manifest io

Dataset load_dataset(const std::string& manifest_or_dir) {
  fs::path manifest_path(manifest_or_dir);
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.jsonl";
  fs::path dir = manifest_path.parent_path();

  std::ifstream file(manifest_path);
  if (!file) throw IoError("cannot open manifest '" + manifest_path.string() + "'");

  Dataset ds;
  std::string line;
  size_t line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("manifest '" + manifest_path.string() + "' line " +
                       std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (line_no == 1) {
        if (j.value("type", "") != "dataset") {
          throw ParseError("manifest '" + manifest_path.string() +
                           "' must start with a {\"type\":\"dataset\", ...} header record");
        }
        ds.meta.tau = j.at("tau").get<size_t>();
        ds.meta.n_features = j.at("n_features").get<size_t>();
        ds.meta.t_obs_hours = j.value("t_obs_hours", ds.meta.t_obs_hours);
        ds.meta.t_pred_hours = j.value("t_pred_hours", ds.meta.t_pred_hours);
        ds.meta.partition_id = j.value("partition_id", ds.meta.partition_id);
        continue;
      }
      MvtsInstance inst;
      inst.tau = ds.meta.tau;
      inst.n_features = ds.meta.n_features;
      inst.file = j.at("file").get<std::string>();
      inst.label = flare_class_from_string(j.at("label").get<std::string>());
      inst.start_time = j.at("start_time").get<std::string>();
      inst.start_epoch_s = parse_iso8601_utc(inst.start_time);
      inst.source_id = j.at("source_id").get<std::string>();
      fs::path csv = dir / inst.file;
      if (!fs::exists(csv)) {
        throw ValidationError("manifest references missing file '" + csv.string() + "'");
      }
      inst.values = read_instance_csv(csv, ds.meta.tau, ds.meta.n_features);
      ds.instances.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("manifest '" + manifest_path.string() + "' line " +
                       std::to_string(line_no) + ": " + e.what());
    }
  }
  if (line_no == 0) {
    throw ParseError("manifest '" + manifest_path.string() + "' is empty (expected a header record)");
  }
  sort_canonical(ds.instances);
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& dir) {
  fs::path root(dir);
  fs::create_directories(root / "instances");

  std::vector<const MvtsInstance*> order;
  order.reserve(dataset.instances.size());
  for (const auto& inst : dataset.instances) order.push_back(&inst);
  std::stable_sort(order.begin(), order.end(), [](const MvtsInstance* a, const MvtsInstance* b) {
    if (a->start_epoch_s != b->start_epoch_s) return a->start_epoch_s < b->start_epoch_s;
    return a->source_id < b->source_id;
  });

  std::ofstream manifest(root / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError("cannot open manifest for writing under '" + dir + "'");
  nlohmann::json header = {
      {"type", "dataset"},
      {"tau", dataset.meta.tau},
      {"n_features", dataset.meta.n_features},
      {"t_obs_hours", dataset.meta.t_obs_hours},
      {"t_pred_hours", dataset.meta.t_pred_hours},
      {"partition_id", dataset.meta.partition_id},
  };
  manifest << header.dump() << '\n';
  size_t index = 0;
  for (const MvtsInstance* inst : order) {
    std::string file = inst->file;
    if (file.empty()) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "instances/inst_%05zu.csv", index);
      file = buf;
    }
    nlohmann::json rec = {
        {"file", file},
        {"label", to_string(inst->label)},
        {"start_time", inst->start_time},
        {"source_id", inst->source_id},
    };
    manifest << rec.dump() << '\n';
    write_instance_csv(root / file, *inst);
    ++index;
  }
  if (!manifest) throw IoError("failed writing manifest under '" + dir + "'");
}

// ---------------------------------------------------------------------------
// preprocessing

Dataset filter_training_nf_to_fq(const Dataset& dataset) {
  if (dataset.split != SplitTag::train) {
    throw ContractError("filter_training_nf_to_fq applies only to a train split");
  }
  Dataset out;
  out.meta = dataset.meta;
  out.split = dataset.split;
  for (const auto& inst : dataset.instances) {
    if (is_flare(inst.label) || inst.label == FlareClass::FQ) out.instances.push_back(inst);
  }
  return out;
}

namespace {

// Pearson statistics of a (target, neighbor) column pair over the rows where
// both are observed.
struct PairStats {
  size_t neighbor = 0;
  double r = 0.0;
  double mean_t = 0.0, sd_t = 0.0;  // target column over the joint support
  double mean_n = 0.0, sd_n = 0.0;  // neighbor column over the joint support
};

}  // namespace

Dataset impute_fpcknn(const Dataset& dataset, size_t k) {
  if (k < 1) throw ContractError("impute_fpcknn requires k >= 1");
  const size_t tau = dataset.meta.tau;
  const size_t nf = dataset.meta.n_features;

  // Dataset-wide feature means over observed cells (final fallback).
  std::vector<double> ds_sum(nf, 0.0);
  std::vector<size_t> ds_count(nf, 0);
  for (const auto& inst : dataset.instances) {
    for (size_t t = 0; t < tau; ++t) {
      for (size_t f = 0; f < nf; ++f) {
        double v = inst.at(t, f);
        if (!std::isnan(v)) {
          ds_sum[f] += v;
          ++ds_count[f];
        }
      }
    }
  }

  Dataset out = dataset;
  for (auto& inst : out.instances) {
    bool any_missing = false;
    bool any_observed = false;
    for (double v : inst.values) {
      if (std::isnan(v)) {
        any_missing = true;
      } else {
        any_observed = true;
      }
    }
    if (!any_observed) {
      throw ImputationError("instance '" + inst.file + "' is entirely missing");
    }
    if (!any_missing) continue;

    const MvtsInstance& src = inst;  // imputation reads original values only
    std::vector<double> imputed = src.values;

    // Per-column observed stats for interpolation / mean fallbacks.
    std::vector<double> col_mean(nf, 0.0);
    std::vector<size_t> col_count(nf, 0);
    for (size_t f = 0; f < nf; ++f) {
      for (size_t t = 0; t < tau; ++t) {
        double v = src.at(t, f);
        if (!std::isnan(v)) {
          col_mean[f] += v;
          ++col_count[f];
        }
      }
      if (col_count[f] > 0) col_mean[f] /= static_cast<double>(col_count[f]);
    }

    for (size_t target = 0; target < nf; ++target) {
      bool gappy = false;
      for (size_t t = 0; t < tau && !gappy; ++t) gappy = std::isnan(src.at(t, target));
      if (!gappy) continue;

      // Rank every other column by |r| over the jointly observed rows.
      std::vector<PairStats> candidates;
      for (size_t other = 0; other < nf; ++other) {
        if (other == target) continue;
        double st = 0.0, sn = 0.0, stt = 0.0, snn = 0.0, stn = 0.0;
        size_t joint = 0;
        for (size_t t = 0; t < tau; ++t) {
          double a = src.at(t, target);
          double b = src.at(t, other);
          if (std::isnan(a) || std::isnan(b)) continue;
          ++joint;
          st += a;
          sn += b;
          stt += a * a;
          snn += b * b;
          stn += a * b;
        }
        if (joint < 2) continue;
        double n = static_cast<double>(joint);
        PairStats ps;
        ps.neighbor = other;
        ps.mean_t = st / n;
        ps.mean_n = sn / n;
        double var_t = stt / n - ps.mean_t * ps.mean_t;
        double var_n = snn / n - ps.mean_n * ps.mean_n;
        if (var_t <= 0.0 || var_n <= 0.0) continue;
        ps.sd_t = std::sqrt(var_t);
        ps.sd_n = std::sqrt(var_n);
        ps.r = (stn / n - ps.mean_t * ps.mean_n) / (ps.sd_t * ps.sd_n);
        if (!std::isfinite(ps.r)) continue;
        candidates.push_back(ps);
      }
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const PairStats& a, const PairStats& b) {
                         double wa = std::fabs(a.r), wb = std::fabs(b.r);
                         if (wa != wb) return wa > wb;
                         return a.neighbor < b.neighbor;
                       });
      if (candidates.size() > k) candidates.resize(k);

      // Observed row index list for interpolation.
      std::vector<size_t> observed_rows;
      for (size_t t = 0; t < tau; ++t) {
        if (!std::isnan(src.at(t, target))) observed_rows.push_back(t);
      }

      for (size_t t = 0; t < tau; ++t) {
        if (!std::isnan(src.at(t, target))) continue;

        double weight_sum = 0.0;
        double pred_sum = 0.0;
        for (const PairStats& ps : candidates) {
          double v = src.at(t, ps.neighbor);
          if (std::isnan(v)) continue;
          double z = (v - ps.mean_n) / ps.sd_n;
          double sign = ps.r < 0.0 ? -1.0 : 1.0;
          double pred = ps.mean_t + ps.sd_t * sign * z;
          double w = std::fabs(ps.r);
          pred_sum += w * pred;
          weight_sum += w;
        }
        if (weight_sum > 0.0) {
          imputed[t * nf + target] = pred_sum / weight_sum;
          continue;
        }

        // Fallback 1: two-sided temporal linear interpolation.
        auto next = std::lower_bound(observed_rows.begin(), observed_rows.end(), t);
        if (next != observed_rows.begin() && next != observed_rows.end()) {
          size_t hi = *next;
          size_t lo = *(next - 1);
          double vlo = src.at(lo, target), vhi = src.at(hi, target);
          double frac = static_cast<double>(t - lo) / static_cast<double>(hi - lo);
          imputed[t * nf + target] = vlo + frac * (vhi - vlo);
          continue;
        }
        // Fallback 2: column mean.
        if (col_count[target] > 0) {
          imputed[t * nf + target] = col_mean[target];
          continue;
        }
        // Fallback 3: dataset feature mean.
        if (ds_count[target] > 0) {
          imputed[t * nf + target] = ds_sum[target] / static_cast<double>(ds_count[target]);
          continue;
        }
        throw ImputationError("no imputation rule applies to instance '" + inst.file +
                              "' cell (t=" + std::to_string(t) +
                              ", feature=" + std::to_string(target) + ")");
      }
    }
    inst.values = std::move(imputed);
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> zscore_fit(const Dataset& train) {
  const size_t nf = train.meta.n_features;
  std::vector<double> sum(nf, 0.0), sumsq(nf, 0.0);
  std::vector<size_t> count(nf, 0);
  for (const auto& inst : train.instances) {
    for (size_t t = 0; t < inst.tau; ++t) {
      for (size_t f = 0; f < nf; ++f) {
        double v = inst.at(t, f);
        if (std::isnan(v)) continue;
        sum[f] += v;
        sumsq[f] += v * v;
        ++count[f];
      }
    }
  }
  std::vector<double> mean(nf, 0.0), stdev(nf, 0.0);
  for (size_t f = 0; f < nf; ++f) {
    if (count[f] == 0) continue;
    double n = static_cast<double>(count[f]);
    mean[f] = sum[f] / n;
    double var = sumsq[f] / n - mean[f] * mean[f];
    stdev[f] = var > 0.0 ? std::sqrt(var) : 0.0;
  }
  return {std::move(mean), std::move(stdev)};
}

Dataset zscore_apply(const Dataset& dataset, const std::vector<double>& mean,
                     const std::vector<double>& stdev) {
  const size_t nf = dataset.meta.n_features;
  if (mean.size() != nf || stdev.size() != nf) {
    throw ValidationError("normalization stats of length " + std::to_string(mean.size()) + "/" +
                          std::to_string(stdev.size()) + " do not match " + std::to_string(nf) +
                          " features");
  }
  Dataset out = dataset;
  for (auto& inst : out.instances) {
    for (size_t t = 0; t < inst.tau; ++t) {
      for (size_t f = 0; f < nf; ++f) {
        double& v = inst.at(t, f);
        if (std::isnan(v)) continue;
        v = (v - mean[f]) / std::max(stdev[f], 1e-8);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// chronological protocol

std::vector<ChronologicalPair> chronological_pairs(const std::vector<Dataset>& partitions,
                                                   double val_fraction) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ContractError("val_fraction must satisfy 0 <= f < 1");
  }
  std::vector<const Dataset*> order;
  for (const auto& p : partitions) {
    if (p.instances.empty()) {
      throw ValidationError("chronological_pairs: partition " +
                            std::to_string(p.meta.partition_id) + " has no instances");
    }
    order.push_back(&p);
  }
  std::stable_sort(order.begin(), order.end(), [](const Dataset* a, const Dataset* b) {
    return a->time_range().first < b->time_range().first;
  });
  for (size_t i = 0; i + 1 < order.size(); ++i) {
    auto [lo_i, hi_i] = order[i]->time_range();
    auto [lo_j, hi_j] = order[i + 1]->time_range();
    if (hi_i >= lo_j) {
      throw LeakageError("partition time ranges overlap: [" + format_iso8601_utc(lo_i) + ", " +
                         format_iso8601_utc(hi_i) + "] vs [" + format_iso8601_utc(lo_j) + ", " +
                         format_iso8601_utc(hi_j) + "]");
    }
  }

  std::vector<ChronologicalPair> pairs;
  for (size_t i = 0; i + 1 < order.size(); ++i) {
    const Dataset& src = *order[i];
    const Dataset& tst = *order[i + 1];
    ChronologicalPair pair;
    int id_a = src.meta.partition_id > 0 ? src.meta.partition_id : static_cast<int>(i + 1);
    int id_b = tst.meta.partition_id > 0 ? tst.meta.partition_id : static_cast<int>(i + 2);
    pair.name = "P" + std::to_string(id_a) + "-P" + std::to_string(id_b);
    auto [train, validation] = split_validation_tail(src, val_fraction);
    pair.train = std::move(train);
    pair.validation = std::move(validation);
    pair.test = tst;
    pair.test.split = SplitTag::test;
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::pair<Dataset, Dataset> split_validation_tail(const Dataset& partition, double val_fraction) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ContractError("val_fraction must satisfy 0 <= f < 1");
  }
  std::vector<MvtsInstance> sorted = partition.instances;
  sort_canonical(sorted);
  size_t n_val = static_cast<size_t>(static_cast<double>(sorted.size()) * val_fraction);
  size_t n_train = sorted.size() - n_val;

  Dataset train;
  train.meta = partition.meta;
  train.split = SplitTag::train;
  train.instances.assign(sorted.begin(), sorted.begin() + static_cast<ptrdiff_t>(n_train));
  Dataset validation;
  validation.meta = partition.meta;
  validation.split = SplitTag::validation;
  validation.instances.assign(sorted.begin() + static_cast<ptrdiff_t>(n_train), sorted.end());
  return {std::move(train), std::move(validation)};
}

size_t BinaryDataset::positives() const {
  size_t n = 0;
  for (int l : labels) n += l == 1 ? 1 : 0;
  return n;
}

BinaryDataset consolidate(const Dataset& dataset, std::vector<double> mean,
                          std::vector<double> stdev) {
  BinaryDataset out;
  out.tau = dataset.meta.tau;
  out.n_features = dataset.meta.n_features;
  out.mean = std::move(mean);
  out.stdev = std::move(stdev);
  out.instances = dataset.instances;
  out.labels.reserve(dataset.instances.size());
  for (const auto& inst : dataset.instances) out.labels.push_back(is_flare(inst.label) ? 1 : 0);
  return out;
}

// ---------------------------------------------------------------------------
// synthetic generator

void SynthSpec::validate() const {
  if (n_instances < 1 && partition_sizes.empty()) {
    throw ConfigError("synthetic spec requires n_instances >= 1");
  }
  if (tau < 1 || n_features < 1) throw ConfigError("synthetic spec requires tau, n_features >= 1");
  if (imbalance < 0.0 || imbalance > 1.0) throw ConfigError("imbalance must lie in [0, 1]");
  if (signal_count > tau) {
    throw ConfigError("signal_count m = " + std::to_string(signal_count) +
                      " exceeds tau = " + std::to_string(tau));
  }
  if (pattern == Pattern::dispersed && signal_count > (tau + 1) / 2) {
    throw ConfigError("dispersed pattern with m = " + std::to_string(signal_count) +
                      " cannot be non-contiguous within tau = " + std::to_string(tau));
  }
  if (noise_level < 0.0) throw ConfigError("noise_level must be >= 0");
  if (missing_fraction < 0.0 || missing_fraction >= 1.0) {
    throw ConfigError("missing_fraction must satisfy 0 <= f < 1");
  }
  if (partitions < 1) throw ConfigError("partitions must be >= 1");
  for (size_t s : partition_sizes) {
    if (s < 1) throw ConfigError("partition_sizes entries must be >= 1");
  }
  if (step_s < 1) throw ConfigError("step_s must be >= 1");
}

nlohmann::json SynthSpec::to_json() const {
  return {
      {"n_instances", n_instances},
      {"tau", tau},
      {"n_features", n_features},
      {"imbalance", imbalance},
      {"pattern", pattern == Pattern::dispersed ? "dispersed" : "contiguous"},
      {"signal_count", signal_count},
      {"signal_features", signal_features},
      {"amplitude", amplitude},
      {"base_shift", base_shift},
      {"noise_level", noise_level},
      {"missing_fraction", missing_fraction},
      {"partitions", partitions},
      {"partition_sizes", partition_sizes},
      {"t0", format_iso8601_utc(t0_epoch_s)},
      {"step_s", step_s},
  };
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  static const char* known[] = {"n_instances",   "tau",          "n_features",
                                "imbalance",     "pattern",      "signal_count",
                                "signal_features", "amplitude",  "base_shift",
                                "noise_level",   "missing_fraction", "partitions",
                                "partition_sizes", "t0",         "step_s"};
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* key : known) ok = ok || item.key() == key;
    if (!ok) throw ConfigError("unknown synth config key '" + item.key() + "'");
  }
  SynthSpec s;
  s.n_instances = j.value("n_instances", s.n_instances);
  s.tau = j.value("tau", s.tau);
  s.n_features = j.value("n_features", s.n_features);
  s.imbalance = j.value("imbalance", s.imbalance);
  std::string pat = j.value("pattern", std::string("dispersed"));
  if (pat == "dispersed") {
    s.pattern = Pattern::dispersed;
  } else if (pat == "contiguous") {
    s.pattern = Pattern::contiguous;
  } else {
    throw ConfigError("unknown pattern '" + pat + "' (expected dispersed | contiguous)");
  }
  s.signal_count = j.value("signal_count", s.signal_count);
  s.signal_features = j.value("signal_features", s.signal_features);
  s.amplitude = j.value("amplitude", s.amplitude);
  s.base_shift = j.value("base_shift", s.base_shift);
  s.noise_level = j.value("noise_level", s.noise_level);
  s.missing_fraction = j.value("missing_fraction", s.missing_fraction);
  s.partitions = j.value("partitions", s.partitions);
  s.partition_sizes = j.value("partition_sizes", s.partition_sizes);
  if (j.contains("t0")) s.t0_epoch_s = parse_iso8601_utc(j.at("t0").get<std::string>());
  s.step_s = j.value("step_s", s.step_s);
  s.validate();
  return s;
}

// Chooses n distinct values from [0, bound) without replacement.
static std::vector<size_t> sample_without_replacement(size_t bound, size_t n, Rng& rng) {
  std::vector<size_t> pool(bound);
  for (size_t i = 0; i < bound; ++i) pool[i] = i;
  rng.shuffle(pool.begin(), pool.end());
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Five-class label list honoring Table-style proportions: M:X within F at
// 1.7:0.16, FQ:B:C within NF at 82.8:5.5:9.8.
static std::vector<FlareClass> partition_labels(size_t size, double imbalance, Rng& rng) {
  size_t n_f = static_cast<size_t>(std::llround(imbalance * static_cast<double>(size)));
  n_f = std::min(n_f, size);
  size_t n_x = static_cast<size_t>(std::llround(static_cast<double>(n_f) * 0.16 / 1.86));
  size_t n_m = n_f - n_x;
  size_t n_nf = size - n_f;
  size_t n_b = static_cast<size_t>(std::llround(static_cast<double>(n_nf) * 5.5 / 98.1));
  size_t n_c = static_cast<size_t>(std::llround(static_cast<double>(n_nf) * 9.8 / 98.1));
  size_t n_fq = n_nf - n_b - n_c;

  std::vector<FlareClass> labels;
  labels.reserve(size);
  labels.insert(labels.end(), n_fq, FlareClass::FQ);
  labels.insert(labels.end(), n_b, FlareClass::B);
  labels.insert(labels.end(), n_c, FlareClass::C);
  labels.insert(labels.end(), n_m, FlareClass::M);
  labels.insert(labels.end(), n_x, FlareClass::X);
  rng.shuffle(labels.begin(), labels.end());
  return labels;
}

SynthResult generate_synthetic(const SynthSpec& spec, Rng& rng) {
  spec.validate();

  std::vector<size_t> sizes = spec.partition_sizes;
  if (sizes.empty()) {
    sizes.assign(spec.partitions, spec.n_instances / spec.partitions);
    for (size_t i = 0; i < spec.n_instances % spec.partitions; ++i) ++sizes[i];
    for (size_t s : sizes) {
      if (s == 0) throw ConfigError("too many partitions for n_instances");
    }
  }

  size_t n_sig = spec.signal_features > 0 ? spec.signal_features
                                          : std::max<size_t>(1, spec.n_features / 6);
  n_sig = std::min(n_sig, spec.n_features);
  Rng feat_rng = rng.split("signal_features");
  std::vector<size_t> signal_features =
      sample_without_replacement(spec.n_features, n_sig, feat_rng);

  const double phi = 0.8;
  const double innov_sd = spec.noise_level * std::sqrt(1.0 - phi * phi);

  SynthResult result;
  size_t global_index = 0;
  for (size_t p = 0; p < sizes.size(); ++p) {
    Dataset ds;
    ds.meta.tau = spec.tau;
    ds.meta.n_features = spec.n_features;
    ds.meta.partition_id = static_cast<int>(p + 1);

    Rng label_rng = rng.split("labels").split(p);
    std::vector<FlareClass> labels = partition_labels(sizes[p], spec.imbalance, label_rng);

    nlohmann::json truth_instances = nlohmann::json::array();
    for (size_t i = 0; i < sizes[p]; ++i, ++global_index) {
      Rng inst_rng = rng.split("instance").split(global_index);
      MvtsInstance inst;
      inst.tau = spec.tau;
      inst.n_features = spec.n_features;
      inst.label = labels[i];
      inst.start_epoch_s = spec.t0_epoch_s + static_cast<int64_t>(global_index) * spec.step_s;
      inst.start_time = format_iso8601_utc(inst.start_epoch_s);
      char buf[40];
      std::snprintf(buf, sizeof(buf), "AR%04zu", global_index / 20);
      inst.source_id = buf;
      std::snprintf(buf, sizeof(buf), "instances/inst_%05zu.csv", i);
      inst.file = buf;

      inst.values.resize(spec.tau * spec.n_features);
      for (size_t f = 0; f < spec.n_features; ++f) {
        double prev = inst_rng.normal(0.0, spec.noise_level);
        inst.at(0, f) = prev;
        for (size_t t = 1; t < spec.tau; ++t) {
          prev = phi * prev + inst_rng.normal(0.0, innov_sd);
          inst.at(t, f) = prev;
        }
      }

      if (is_flare(inst.label)) {
        std::vector<size_t> indices;
        if (spec.signal_count > 0) {
          if (spec.pattern == SynthSpec::Pattern::dispersed) {
            // Sorted draw from a reduced range plus the index offset yields
            // pairwise gaps >= 2, i.e. non-contiguous signal positions.
            indices = sample_without_replacement(spec.tau - spec.signal_count + 1,
                                                 spec.signal_count, inst_rng);
            for (size_t q = 0; q < indices.size(); ++q) indices[q] += q;
          } else {
            size_t start = inst_rng.below(spec.tau - spec.signal_count + 1);
            for (size_t q = 0; q < spec.signal_count; ++q) indices.push_back(start + q);
          }
        }
        for (size_t f : signal_features) {
          for (size_t t = 0; t < spec.tau; ++t) inst.at(t, f) += spec.base_shift;
          for (size_t t : indices) inst.at(t, f) += spec.amplitude;
        }
        truth_instances.push_back({{"file", inst.file},
                                   {"label", to_string(inst.label)},
                                   {"signal_indices", indices}});
      }

      if (spec.missing_fraction > 0.0) {
        for (double& v : inst.values) {
          if (inst_rng.next_double() < spec.missing_fraction) v = kNaN;
        }
      }
      ds.instances.push_back(std::move(inst));
    }
    sort_canonical(ds.instances);

    nlohmann::json truth = {
        {"pattern", spec.pattern == SynthSpec::Pattern::dispersed ? "dispersed" : "contiguous"},
        {"signal_count", spec.signal_count},
        {"signal_features", signal_features},
        {"amplitude", spec.amplitude},
        {"base_shift", spec.base_shift},
        {"instances", truth_instances},
    };
    result.partitions.push_back(std::move(ds));
    result.ground_truth.push_back(std::move(truth));
  }
  return result;
}

}  // namespace gctaf
