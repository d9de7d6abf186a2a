#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>

#include "gctaf/data.hpp"
#include "gctaf/errors.hpp"
#include "gctaf/log.hpp"
#include "gctaf/metrics.hpp"
#include "gctaf/model.hpp"
#include "gctaf/parallel.hpp"
#include "gctaf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gctaf::cli {

namespace {

// ---------------------------------------------------------------------------
// run-config plumbing

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* key : allowed) ok = ok || item.key() == key;
    if (!ok) {
      throw ConfigError(std::string("unknown ") + where + " config key '" + item.key() + "'");
    }
  }
}

std::string out_dir(const json& run) {
  if (!run.contains("out")) throw ConfigError("an output directory is required (--out)");
  std::string dir = run.at("out").get<std::string>();
  fs::create_directories(dir);
  return dir;
}

size_t thread_count(const json& run) {
  return std::max<size_t>(1, run.value("threads", static_cast<size_t>(1)));
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw IoError("cannot open '" + path.string() + "' for writing");
  file << j.dump(2) << '\n';
  if (!file) throw IoError("failed writing '" + path.string() + "'");
}

json read_json(const fs::path& path) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(file);
  } catch (const json::exception& e) {
    throw ParseError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

void echo_config(const std::string& dir, const json& effective) {
  write_json(fs::path(dir) / "effective_config.json", effective);
}

// Applies the top-level seed (if any) to both model and train seeds, so one
// --seed flag pins the whole run.
json seeded(const json& run, json sub, const char* field) {
  if (run.contains("seed")) sub[field] = run.at("seed").get<uint64_t>();
  return sub;
}

ModelConfig model_config(const json& run) {
  json j = seeded(run, run.value("model", json::object()), "seed");
  return ModelConfig::from_json(j);
}

TrainConfig train_config(const json& run) {
  json j = seeded(run, run.value("train", json::object()), "seed");
  return TrainConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// dataset plumbing

std::vector<Dataset> load_partitions(const std::string& root) {
  std::vector<std::pair<int, fs::path>> found;
  if (!fs::is_directory(root)) throw IoError("dataset root '" + root + "' is not a directory");
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    std::string name = entry.path().filename().string();
    if (name.rfind("partition_", 0) != 0) continue;
    int id = std::atoi(name.c_str() + 10);
    found.emplace_back(id, entry.path());
  }
  if (found.empty()) {
    throw ValidationError("no partition_* directories under '" + root + "'");
  }
  std::sort(found.begin(), found.end());
  std::vector<Dataset> partitions;
  for (auto& [id, path] : found) partitions.push_back(load_dataset(path.string()));
  return partitions;
}

struct PreparedPair {
  std::string name;
  BinaryDataset train, validation, test;
};

// The preprocessing protocol: FQ-filter the training split, impute it, fit
// normalization on it, then impute and normalize validation/test with the
// training statistics.
PreparedPair prepare_pair(const ChronologicalPair& pair, size_t impute_k) {
  PreparedPair out;
  out.name = pair.name;
  Dataset train = impute_fpcknn(filter_training_nf_to_fq(pair.train), impute_k);
  auto [mean, stdev] = zscore_fit(train);
  out.train = consolidate(zscore_apply(train, mean, stdev), mean, stdev);
  if (!pair.validation.instances.empty()) {
    Dataset val = impute_fpcknn(pair.validation, impute_k);
    out.validation = consolidate(zscore_apply(val, mean, stdev), mean, stdev);
  } else {
    out.validation.tau = out.train.tau;
    out.validation.n_features = out.train.n_features;
  }
  if (!pair.test.instances.empty()) {
    Dataset test = impute_fpcknn(pair.test, impute_k);
    out.test = consolidate(zscore_apply(test, mean, stdev), mean, stdev);
  } else {
    out.test.tau = out.train.tau;
    out.test.n_features = out.train.n_features;
  }
  return out;
}

void check_pair_leakage(const Dataset& train, const Dataset& test) {
  if (train.instances.empty() || test.instances.empty()) return;
  int64_t train_max = train.time_range().second;
  int64_t test_min = test.time_range().first;
  if (train_max >= test_min) {
    throw LeakageError("training data extends to " + format_iso8601_utc(train_max) +
                       " but test data starts at " + format_iso8601_utc(test_min));
  }
}

void write_norm_stats(const fs::path& path, const BinaryDataset& train, size_t impute_k) {
  write_json(path, json{{"mean", train.mean}, {"std", train.stdev}, {"impute_k", impute_k}});
}

std::string csv_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string mlp_units_str(const std::vector<size_t>& units) {
  std::string out;
  for (size_t i = 0; i < units.size(); ++i) {
    if (i) out += '-';
    out += std::to_string(units[i]);
  }
  return out;
}

std::string opt_csv_cell(const std::optional<double>& v) {
  return v.has_value() ? csv_cell(*v) : std::string();
}

}  // namespace

// ---------------------------------------------------------------------------
// synth

void cmd_synth(const nlohmann::json& run) {
  check_keys(run, {"command", "seed", "threads", "out", "synth"}, "run");
  std::string dir = out_dir(run);
  SynthSpec spec = SynthSpec::from_json(run.value("synth", json::object()));
  uint64_t seed = run.value("seed", static_cast<uint64_t>(42));

  Rng rng(seed);
  SynthResult result = generate_synthetic(spec, rng);
  for (size_t p = 0; p < result.partitions.size(); ++p) {
    fs::path pdir = fs::path(dir) / ("partition_" + std::to_string(p + 1));
    save_dataset(result.partitions[p], pdir.string());
    write_json(pdir / "ground_truth.json", result.ground_truth[p]);
    log_info("partition %zu: %zu instances (%zu flare) -> %s", p + 1,
             result.partitions[p].instances.size(), result.partitions[p].flare_count(),
             pdir.string().c_str());
  }

  json effective = {{"command", "synth"}, {"seed", seed}, {"out", dir},
                    {"synth", spec.to_json()}};
  echo_config(dir, effective);
}

// ---------------------------------------------------------------------------
// train

void cmd_train(const nlohmann::json& run) {
  check_keys(run, {"command", "seed", "threads", "out", "model", "train", "data"}, "run");
  std::string dir = out_dir(run);
  ModelConfig mcfg = model_config(run);
  TrainConfig tcfg = train_config(run);
  json data = run.value("data", json::object());
  check_keys(data, {"train", "test", "impute_k", "val_fraction"}, "data");
  if (!data.contains("train")) throw ConfigError("train requires a training dataset (--train)");
  std::string train_dir = data.at("train").get<std::string>();
  size_t impute_k = data.value("impute_k", static_cast<size_t>(5));
  double val_fraction = data.value("val_fraction", 0.2);

  Dataset partition = load_dataset(train_dir);
  if (partition.meta.tau != mcfg.tau || partition.meta.n_features != mcfg.n_features) {
    throw ValidationError("dataset is tau=" + std::to_string(partition.meta.tau) + ", N=" +
                          std::to_string(partition.meta.n_features) + " but the model expects tau=" +
                          std::to_string(mcfg.tau) + ", N=" + std::to_string(mcfg.n_features));
  }
  ChronologicalPair pair;
  pair.name = "train";
  auto [train_split, val_split] = split_validation_tail(partition, val_fraction);
  pair.train = std::move(train_split);
  pair.validation = std::move(val_split);
  pair.test.meta = partition.meta;
  pair.test.split = SplitTag::test;

  std::optional<Dataset> test_partition;
  if (data.contains("test")) {
    test_partition = load_dataset(data.at("test").get<std::string>());
    test_partition->split = SplitTag::test;
    check_pair_leakage(partition, *test_partition);
    pair.test = *test_partition;
  }

  PreparedPair prepared = prepare_pair(pair, impute_k);
  log_info("training on %zu instances (%zu flare), validating on %zu", prepared.train.size(),
           prepared.train.positives(), prepared.validation.size());
  auto [params, report] = train(mcfg, tcfg, prepared.train, prepared.validation);

  fs::path ckpt = fs::path(dir) / "checkpoint.gctaf";
  save_params(params, mcfg, ckpt.string());
  write_norm_stats(ckpt.string() + ".norm.json", prepared.train, impute_k);
  write_train_report_csv(report, (fs::path(dir) / "report.csv").string());
  log_info("selected epoch %zu of %zu", report.selected_epoch, report.rows.size());

  if (test_partition.has_value()) {
    EvalResult result = evaluate(params, mcfg, prepared.test);
    write_json(fs::path(dir) / "metrics.json", to_json(result.metrics));
  }

  json effective = {{"command", "train"},
                    {"out", dir},
                    {"model", mcfg.to_json()},
                    {"train", tcfg.to_json()},
                    {"data", data}};
  effective["data"]["impute_k"] = impute_k;
  effective["data"]["val_fraction"] = val_fraction;
  echo_config(dir, effective);
}

// ---------------------------------------------------------------------------
// eval

void cmd_eval(const nlohmann::json& run) {
  check_keys(run, {"command", "seed", "threads", "out", "eval"}, "run");
  std::string dir = out_dir(run);
  json opts = run.value("eval", json::object());
  check_keys(opts, {"checkpoint", "data", "norm", "impute_k"}, "eval");
  if (!opts.contains("checkpoint")) throw ConfigError("eval requires --checkpoint");
  if (!opts.contains("data") || opts.at("data").empty()) {
    throw ConfigError("eval requires at least one --data directory");
  }
  std::string ckpt_path = opts.at("checkpoint").get<std::string>();
  auto [params, mcfg] = load_params(ckpt_path);

  std::string norm_path = opts.value("norm", ckpt_path + ".norm.json");
  json norm = read_json(norm_path);
  std::vector<double> mean = norm.at("mean").get<std::vector<double>>();
  std::vector<double> stdev = norm.at("std").get<std::vector<double>>();
  size_t impute_k = opts.value("impute_k", norm.value("impute_k", static_cast<size_t>(5)));

  std::vector<std::string> data_dirs = opts.at("data").get<std::vector<std::string>>();
  std::vector<MetricsReport> reports;
  for (const std::string& data_dir : data_dirs) {
    Dataset test = load_dataset(data_dir);
    if (test.instances.empty()) {
      throw ContractError("test manifest under '" + data_dir + "' lists no instances");
    }
    if (test.meta.tau != mcfg.tau || test.meta.n_features != mcfg.n_features) {
      throw ValidationError("test data is tau=" + std::to_string(test.meta.tau) + ", N=" +
                            std::to_string(test.meta.n_features) +
                            " but the checkpoint expects tau=" + std::to_string(mcfg.tau) +
                            ", N=" + std::to_string(mcfg.n_features));
    }
    test.split = SplitTag::test;
    BinaryDataset prepared =
        consolidate(zscore_apply(impute_fpcknn(test, impute_k), mean, stdev), mean, stdev);
    EvalResult result = evaluate(params, mcfg, prepared);
    reports.push_back(result.metrics);
    std::string name = fs::path(data_dir).filename().string();
    write_json(fs::path(dir) / ("metrics_" + name + ".json"), to_json(result.metrics));
    log_info("%s: tss %s", name.c_str(),
             result.metrics.tss ? csv_cell(*result.metrics.tss).c_str() : "undefined");
  }
  if (reports.size() == 1) {
    write_json(fs::path(dir) / "metrics.json", to_json(reports[0]));
  } else {
    write_json(fs::path(dir) / "metrics_aggregate.json", to_json(aggregate(reports)));
  }

  json effective = {{"command", "eval"}, {"out", dir}, {"eval", opts}};
  effective["eval"]["norm"] = norm_path;
  effective["eval"]["impute_k"] = impute_k;
  echo_config(dir, effective);
}

// ---------------------------------------------------------------------------
// ablate

void cmd_ablate(const nlohmann::json& run) {
  check_keys(run, {"command", "seed", "threads", "out", "model", "train", "data", "ablate"},
             "run");
  std::string dir = out_dir(run);
  ModelConfig base_cfg = model_config(run);
  TrainConfig base_tcfg = train_config(run);
  json data = run.value("data", json::object());
  check_keys(data, {"root", "impute_k", "val_fraction"}, "data");
  if (!data.contains("root")) throw ConfigError("ablate requires a dataset root (--data)");
  size_t impute_k = data.value("impute_k", static_cast<size_t>(5));
  double val_fraction = data.value("val_fraction", 0.2);
  json opts = run.value("ablate", json::object());
  check_keys(opts, {"seeds"}, "ablate");
  size_t n_seeds = opts.value("seeds", static_cast<size_t>(1));
  if (n_seeds < 1) throw ConfigError("ablate seeds must be >= 1");

  std::vector<Dataset> partitions = load_partitions(data.at("root").get<std::string>());
  auto pairs = chronological_pairs(partitions, val_fraction);
  if (pairs.empty()) throw ValidationError("ablate needs at least two partitions");
  std::vector<PreparedPair> prepared;
  prepared.reserve(pairs.size());
  for (const auto& pair : pairs) prepared.push_back(prepare_pair(pair, impute_k));

  const Ablation variants[] = {Ablation::none, Ablation::no_global_tokens,
                               Ablation::no_cross_attention, Ablation::no_layer_norm};
  struct Job {
    size_t variant, pair, seed;
  };
  std::vector<Job> jobs;
  for (size_t v = 0; v < 4; ++v) {
    for (size_t p = 0; p < prepared.size(); ++p) {
      for (size_t s = 0; s < n_seeds; ++s) jobs.push_back({v, p, s});
    }
  }
  std::vector<MetricsReport> results(jobs.size());
  parallel_for(jobs.size(), thread_count(run), [&](size_t i) {
    const Job& job = jobs[i];
    ModelConfig cfg = base_cfg;
    cfg.ablation = variants[job.variant];
    TrainConfig tcfg = base_tcfg;
    // Shared seeds across variants: the same (pair, seed) always trains from
    // the same base seed no matter which component is removed.
    cfg.seed = base_cfg.seed + 1000 * job.pair + job.seed;
    tcfg.seed = cfg.seed;
    auto [params, report] = train(cfg, tcfg, prepared[job.pair].train,
                                  prepared[job.pair].validation);
    results[i] = evaluate(params, cfg, prepared[job.pair].test).metrics;
  });

  std::ofstream runs_csv(fs::path(dir) / "ablation_runs.csv", std::ios::trunc);
  runs_csv << "variant,pair,seed,tss,accuracy\n";
  for (size_t i = 0; i < jobs.size(); ++i) {
    runs_csv << ablation_label(variants[jobs[i].variant]) << ',' << prepared[jobs[i].pair].name
             << ',' << jobs[i].seed << ',' << opt_csv_cell(results[i].tss) << ','
             << opt_csv_cell(results[i].accuracy) << '\n';
  }
  runs_csv.close();

  std::ofstream csv(fs::path(dir) / "ablation.csv", std::ios::trunc);
  csv << "variant,mean_tss,std_tss,runs\n";
  json metrics_json = json::object();
  for (size_t v = 0; v < 4; ++v) {
    std::vector<MetricsReport> variant_reports;
    for (size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].variant == v) variant_reports.push_back(results[i]);
    }
    AggregateReport agg = aggregate(variant_reports);
    csv << ablation_label(variants[v]) << ',' << opt_csv_cell(agg.tss.mean) << ','
        << opt_csv_cell(agg.tss.stdev) << ',' << variant_reports.size() << '\n';
    metrics_json[ablation_label(variants[v])] = to_json(agg);
    log_info("%s: mean tss %s over %zu runs", ablation_label(variants[v]),
             agg.tss.mean ? csv_cell(*agg.tss.mean).c_str() : "undefined",
             variant_reports.size());
  }
  csv.close();
  write_json(fs::path(dir) / "ablation_metrics.json", metrics_json);

  json effective = {{"command", "ablate"}, {"out", dir},
                    {"model", base_cfg.to_json()},      {"train", base_tcfg.to_json()},
                    {"data", data},                     {"ablate", {{"seeds", n_seeds}}},
                    {"threads", thread_count(run)}};
  effective["data"]["impute_k"] = impute_k;
  effective["data"]["val_fraction"] = val_fraction;
  echo_config(dir, effective);
}

// ---------------------------------------------------------------------------
// sweep

namespace {

std::vector<ModelConfig> expand_grid(const ModelConfig& base, const TrainConfig& base_t,
                                     const json& grid, std::vector<TrainConfig>& train_out) {
  check_keys(grid,
             {"head_size", "heads", "ff_dim", "mlp_units", "global_tokens", "dropout",
              "num_blocks", "learning_rate"},
             "grid");
  auto sizes = [&](const char* key, std::vector<size_t> fallback) {
    return grid.contains(key) ? grid.at(key).get<std::vector<size_t>>() : fallback;
  };
  std::vector<size_t> head_sizes = sizes("head_size", {base.head_size});
  std::vector<size_t> heads = sizes("heads", {base.heads});
  std::vector<size_t> ff_dims = sizes("ff_dim", {base.ff_dim});
  std::vector<size_t> tokens = sizes("global_tokens", {base.global_tokens});
  std::vector<size_t> blocks = sizes("num_blocks", {base.num_blocks});
  std::vector<std::vector<size_t>> mlps =
      grid.contains("mlp_units") ? grid.at("mlp_units").get<std::vector<std::vector<size_t>>>()
                                 : std::vector<std::vector<size_t>>{base.mlp_units};
  std::vector<double> dropouts = grid.contains("dropout")
                                     ? grid.at("dropout").get<std::vector<double>>()
                                     : std::vector<double>{base.dropout};
  std::vector<double> rates = grid.contains("learning_rate")
                                  ? grid.at("learning_rate").get<std::vector<double>>()
                                  : std::vector<double>{base_t.learning_rate};
  if (head_sizes.empty() || heads.empty() || ff_dims.empty() || tokens.empty() ||
      blocks.empty() || mlps.empty() || dropouts.empty() || rates.empty()) {
    throw ConfigError("sweep grid entries must be non-empty arrays");
  }

  std::vector<ModelConfig> out;
  for (size_t hs : head_sizes) {
    for (size_t h : heads) {
      for (size_t ff : ff_dims) {
        for (const auto& mlp : mlps) {
          for (size_t g : tokens) {
            for (double d : dropouts) {
              for (size_t l : blocks) {
                for (double lr : rates) {
                  ModelConfig cfg = base;
                  cfg.head_size = hs;
                  cfg.heads = h;
                  cfg.ff_dim = ff;
                  cfg.mlp_units = mlp;
                  cfg.global_tokens = g;
                  cfg.dropout = d;
                  cfg.num_blocks = l;
                  cfg.validate();
                  TrainConfig tcfg = base_t;
                  tcfg.learning_rate = lr;
                  tcfg.validate();
                  out.push_back(cfg);
                  train_out.push_back(tcfg);
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

void cmd_sweep(const nlohmann::json& run) {
  check_keys(run, {"command", "seed", "threads", "out", "model", "train", "data", "sweep"},
             "run");
  std::string dir = out_dir(run);
  ModelConfig base_cfg = model_config(run);
  TrainConfig base_tcfg = train_config(run);
  json data = run.value("data", json::object());
  check_keys(data, {"root", "train", "impute_k", "val_fraction"}, "data");
  size_t impute_k = data.value("impute_k", static_cast<size_t>(5));
  double val_fraction = data.value("val_fraction", 0.2);
  json opts = run.value("sweep", json::object());
  check_keys(opts, {"grid", "grid_file", "global_tokens"}, "sweep");

  // The sweep trains on the earliest partition's train/validation split.
  Dataset partition;
  if (data.contains("train")) {
    partition = load_dataset(data.at("train").get<std::string>());
  } else if (data.contains("root")) {
    std::vector<Dataset> partitions = load_partitions(data.at("root").get<std::string>());
    std::sort(partitions.begin(), partitions.end(), [](const Dataset& a, const Dataset& b) {
      return a.time_range().first < b.time_range().first;
    });
    partition = std::move(partitions.front());
  } else {
    throw ConfigError("sweep requires --data (partition root) or --train");
  }
  ChronologicalPair pair;
  pair.name = "sweep";
  auto [train_split, val_split] = split_validation_tail(partition, val_fraction);
  pair.train = std::move(train_split);
  pair.validation = std::move(val_split);
  pair.test.meta = partition.meta;
  PreparedPair prepared = prepare_pair(pair, impute_k);
  if (prepared.validation.size() == 0) {
    throw ValidationError("sweep needs a non-empty validation split");
  }

  json grid = json::object();
  if (opts.contains("grid_file")) grid = read_json(opts.at("grid_file").get<std::string>());
  if (opts.contains("grid")) grid = opts.at("grid");

  // Dedicated global-token sweep mode: (G, validation TSS) pairs.
  if (opts.contains("global_tokens")) {
    std::vector<size_t> gs = opts.at("global_tokens").get<std::vector<size_t>>();
    if (gs.empty()) throw ConfigError("global_tokens sweep list is empty");
    std::vector<std::optional<double>> tss_values(gs.size());
    parallel_for(gs.size(), thread_count(run), [&](size_t i) {
      ModelConfig cfg = base_cfg;
      cfg.global_tokens = gs[i];
      cfg.validate();
      auto [params, report] = train(cfg, base_tcfg, prepared.train, prepared.validation);
      tss_values[i] = report.rows[report.selected_epoch - 1].val_tss;
    });
    std::ofstream csv(fs::path(dir) / "global_token_sweep.csv", std::ios::trunc);
    csv << "global_tokens,tss\n";
    for (size_t i = 0; i < gs.size(); ++i) {
      csv << gs[i] << ',' << opt_csv_cell(tss_values[i]) << '\n';
    }
  }

  if (!grid.empty() || !opts.contains("global_tokens")) {
    std::vector<TrainConfig> train_cfgs;
    std::vector<ModelConfig> configs = expand_grid(base_cfg, base_tcfg, grid, train_cfgs);
    std::vector<std::optional<double>> tss_values(configs.size());
    parallel_for(configs.size(), thread_count(run), [&](size_t i) {
      auto [params, report] =
          train(configs[i], train_cfgs[i], prepared.train, prepared.validation);
      tss_values[i] = report.rows[report.selected_epoch - 1].val_tss;
    });
    std::ofstream csv(fs::path(dir) / "sweep.csv", std::ios::trunc);
    csv << "head_size,heads,ff_dim,mlp_units,global_tokens,dropout,num_blocks,learning_rate,"
           "tss\n";
    for (size_t i = 0; i < configs.size(); ++i) {
      const ModelConfig& c = configs[i];
      csv << c.head_size << ',' << c.heads << ',' << c.ff_dim << ',' << mlp_units_str(c.mlp_units)
          << ',' << c.global_tokens << ',' << c.dropout << ',' << c.num_blocks << ','
          << csv_cell(train_cfgs[i].learning_rate) << ',' << opt_csv_cell(tss_values[i]) << '\n';
    }
  }

  json effective = {{"command", "sweep"},           {"out", dir},
                    {"model", base_cfg.to_json()},  {"train", base_tcfg.to_json()},
                    {"data", data},                 {"sweep", opts},
                    {"threads", thread_count(run)}};
  effective["data"]["impute_k"] = impute_k;
  effective["data"]["val_fraction"] = val_fraction;
  echo_config(dir, effective);
}

// ---------------------------------------------------------------------------
// baseline

void cmd_baseline(const nlohmann::json& run) {
  check_keys(run, {"command", "seed", "threads", "out", "train", "data"}, "run");
  std::string dir = out_dir(run);
  json data = run.value("data", json::object());
  check_keys(data, {"root", "impute_k", "val_fraction"}, "data");
  if (!data.contains("root")) throw ConfigError("baseline requires a dataset root (--data)");
  size_t impute_k = data.value("impute_k", static_cast<size_t>(5));
  double val_fraction = data.value("val_fraction", 0.2);
  uint64_t seed = run.value("seed", static_cast<uint64_t>(42));

  std::vector<Dataset> partitions = load_partitions(data.at("root").get<std::string>());
  auto pairs = chronological_pairs(partitions, val_fraction);
  if (pairs.empty()) throw ValidationError("baseline needs at least two partitions");

  std::vector<MetricsReport> reports(pairs.size());
  std::vector<std::string> names(pairs.size());
  parallel_for(pairs.size(), thread_count(run), [&](size_t i) {
    PreparedPair prepared = prepare_pair(pairs[i], impute_k);
    names[i] = prepared.name;
    reports[i] = vlt_baseline(prepared.train, prepared.test, seed + i);
  });

  json out = json::object();
  json per_pair = json::object();
  for (size_t i = 0; i < pairs.size(); ++i) {
    per_pair[names[i]] = to_json(reports[i]);
    log_info("%s: vlt tss %s", names[i].c_str(),
             reports[i].tss ? csv_cell(*reports[i].tss).c_str() : "undefined");
  }
  out["pairs"] = per_pair;
  out["aggregate"] = to_json(aggregate(reports));
  write_json(fs::path(dir) / "baseline_metrics.json", out);

  json effective = {{"command", "baseline"}, {"out", dir}, {"seed", seed},
                    {"data", data},          {"threads", thread_count(run)}};
  effective["data"]["impute_k"] = impute_k;
  effective["data"]["val_fraction"] = val_fraction;
  echo_config(dir, effective);
}

// ---------------------------------------------------------------------------
// report

void cmd_report(const nlohmann::json& run) {
  check_keys(run, {"command", "seed", "threads", "out", "report"}, "run");
  std::string dir = out_dir(run);
  json opts = run.value("report", json::object());
  check_keys(opts, {"inputs"}, "report");
  if (!opts.contains("inputs") || opts.at("inputs").empty()) {
    throw ConfigError("report requires at least one metrics JSON (--in)");
  }
  std::vector<MetricsReport> reports;
  for (const auto& path : opts.at("inputs")) {
    reports.push_back(metrics_report_from_json(read_json(path.get<std::string>())));
  }
  write_json(fs::path(dir) / "aggregate.json", to_json(aggregate(reports)));

  json effective = {{"command", "report"}, {"out", dir}, {"report", opts}};
  echo_config(dir, effective);
}

}  // namespace gctaf::cli
