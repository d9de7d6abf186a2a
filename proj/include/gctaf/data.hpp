#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gctaf/rng.hpp"

#include "json.hpp"

namespace gctaf {

// Five-class flare labels; M and X consolidate to the flare (F) class,
// FQ/B/C to non-flare (NF).
enum class FlareClass { FQ, B, C, M, X };

const char* to_string(FlareClass c);
FlareClass flare_class_from_string(const std::string& s);
inline bool is_flare(FlareClass c) { return c == FlareClass::M || c == FlareClass::X; }

enum class SplitTag { unassigned, train, validation, test };

int64_t parse_iso8601_utc(const std::string& s);  // "2010-01-01T00:00:00Z" -> epoch seconds
std::string format_iso8601_utc(int64_t epoch_s);

// One tau x N observation window. Missing cells are NaN in memory and empty
// cells in the CSV file.
struct MvtsInstance {
  size_t tau = 0;
  size_t n_features = 0;
  std::vector<double> values;  // row-major [tau][n_features]
  FlareClass label = FlareClass::FQ;
  int64_t start_epoch_s = 0;
  std::string start_time;  // ISO-8601 UTC, as written in the manifest
  std::string source_id;
  std::string file;  // path relative to the dataset directory

  double at(size_t t, size_t f) const { return values[t * n_features + f]; }
  double& at(size_t t, size_t f) { return values[t * n_features + f]; }
};

struct DatasetManifest {
  size_t tau = 0;
  size_t n_features = 0;
  double t_obs_hours = 12.0;
  double t_pred_hours = 24.0;
  int partition_id = 0;
};

struct Dataset {
  DatasetManifest meta;
  std::vector<MvtsInstance> instances;
  SplitTag split = SplitTag::unassigned;

  size_t count(FlareClass c) const;
  size_t flare_count() const;
  // (min, max) start time over instances; contract error when empty.
  std::pair<int64_t, int64_t> time_range() const;
};

// Reads a dataset from a manifest path (or a directory containing
// manifest.jsonl). The first JSONL record describes the dataset; each
// following record names one instance CSV. Instances are returned in
// canonical order (start_time, then source_id).
Dataset load_dataset(const std::string& manifest_or_dir);

// Writes manifest.jsonl plus instances/*.csv under dir.
void save_dataset(const Dataset& dataset, const std::string& dir);

// Training-set selection: keeps all M/X plus only FQ among non-flare
// instances. Guarded by the split tag; only train splits may be filtered.
Dataset filter_training_nf_to_fq(const Dataset& dataset);

// Pearson-correlation kNN imputation, applied per instance. For each gappy
// column, neighbors are the k columns with highest |r| over jointly observed
// rows; a missing cell becomes the |r|-weighted average of the neighbors'
// z-scored values at that row (signed by r), mapped back to the target
// column's scale. Fallbacks per cell, in order: two-sided temporal linear
// interpolation, column mean, dataset feature mean. All imputed values are
// computed against the original missing mask, so column order does not matter
// and observed cells are never altered.
Dataset impute_fpcknn(const Dataset& dataset, size_t k);

// Per-feature mean and population standard deviation over all timestamps.
std::pair<std::vector<double>, std::vector<double>> zscore_fit(const Dataset& train);

// (x - mean) / max(std, 1e-8) per feature; missing cells stay missing.
Dataset zscore_apply(const Dataset& dataset, const std::vector<double>& mean,
                     const std::vector<double>& stdev);

// Consecutive-partition train/test pairs with a chronological validation
// tail (the latest val_fraction of each training partition by start_time).
struct ChronologicalPair {
  std::string name;  // e.g. "P1-P2"
  Dataset train;
  Dataset validation;
  Dataset test;
};

std::vector<ChronologicalPair> chronological_pairs(const std::vector<Dataset>& partitions,
                                                   double val_fraction = 0.2);

// Chronological split of one training partition: the latest val_fraction of
// instances by start_time become the validation subset.
std::pair<Dataset, Dataset> split_validation_tail(const Dataset& partition, double val_fraction);

// Model-ready consolidated dataset: binary labels, normalized values, and the
// training statistics used for normalization.
struct BinaryDataset {
  size_t tau = 0;
  size_t n_features = 0;
  std::vector<MvtsInstance> instances;
  std::vector<int> labels;  // 1 = flare
  std::vector<double> mean, stdev;

  size_t size() const { return instances.size(); }
  size_t positives() const;
};

BinaryDataset consolidate(const Dataset& dataset, std::vector<double> mean,
                          std::vector<double> stdev);

// Synthetic planted-pattern generator. NF instances are AR(1) noise; F
// instances additionally receive a constant offset plus amplitude bumps at
// signal_count time indices (pairwise non-adjacent under Pattern::dispersed,
// one run under Pattern::contiguous) on a per-dataset random feature subset.
struct SynthSpec {
  size_t n_instances = 1000;
  size_t tau = 60;
  size_t n_features = 24;
  double imbalance = 0.1;  // flare fraction, exact by construction
  enum class Pattern { dispersed, contiguous } pattern = Pattern::dispersed;
  size_t signal_count = 6;     // m: signal time indices per F instance
  size_t signal_features = 0;  // 0 -> max(1, n_features / 6)
  double amplitude = 3.0;      // bump height at signal indices
  double base_shift = 0.75;    // constant class offset on signal features
  double noise_level = 1.0;    // stationary AR(1) standard deviation
  double missing_fraction = 0.0;
  size_t partitions = 1;
  std::vector<size_t> partition_sizes;  // optional; overrides n_instances/partitions
  int64_t t0_epoch_s = 1262304000;      // 2010-01-01T00:00:00Z
  int64_t step_s = 3600;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthResult {
  std::vector<Dataset> partitions;
  std::vector<nlohmann::json> ground_truth;  // per partition: signal features/indices
};

SynthResult generate_synthetic(const SynthSpec& spec, Rng& rng);

}  // namespace gctaf
