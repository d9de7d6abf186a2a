#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "commands.hpp"
#include "gctaf/errors.hpp"
#include "gctaf/log.hpp"

using nlohmann::json;

namespace {

// Options shared by every subcommand. Flag overrides win over the config
// file; the merged result is what each command echoes.
struct CommonOpts {
  std::string config_path;
  std::string out;
  uint64_t seed = 42;
  size_t threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON run config (flags override it)");
  cmd->add_option("--out", opts.out, "output directory");
  cmd->add_option("--seed", opts.seed, "master seed applied to model and training");
  cmd->add_option("--threads", opts.threads, "worker threads for sweep/ablate/baseline");
}

json base_run(const CLI::App* cmd, const CommonOpts& opts, const char* name) {
  json run = json::object();
  if (!opts.config_path.empty()) {
    std::ifstream file(opts.config_path);
    if (!file) throw gctaf::IoError("cannot open config '" + opts.config_path + "'");
    try {
      run = json::parse(file);
    } catch (const json::exception& e) {
      throw gctaf::ParseError("invalid JSON in '" + opts.config_path + "': " + e.what());
    }
  }
  if (run.contains("command") && run.at("command").get<std::string>() != name) {
    throw gctaf::ConfigError("config file is for command '" +
                             run.at("command").get<std::string>() + "', not '" + name + "'");
  }
  run["command"] = name;
  if (cmd->count("--out")) run["out"] = opts.out;
  if (cmd->count("--seed")) run["seed"] = opts.seed;
  if (cmd->count("--threads")) run["threads"] = opts.threads;
  return run;
}

// Model/training hyperparameter flags shared by train, ablate and sweep.
struct HyperOpts {
  size_t epochs = 20, batch_size = 32, global_tokens = 4, blocks = 1, heads = 4, head_size = 256,
         ff_dim = 4, tau = 60, features = 24;
  double lr = 1e-4, dropout = 0.1, undersample = 0.0;
  std::vector<size_t> mlp;
  std::string ablation, selection;
  bool positional_encoding = false;
};

void add_hyper(CLI::App* cmd, HyperOpts& h) {
  cmd->add_option("--epochs", h.epochs, "training epochs");
  cmd->add_option("--batch-size", h.batch_size, "mini-batch size");
  cmd->add_option("--lr", h.lr, "learning rate");
  cmd->add_option("--tau", h.tau, "time steps per instance");
  cmd->add_option("--features", h.features, "features per time step");
  cmd->add_option("--global-tokens", h.global_tokens, "number of learnable global tokens");
  cmd->add_option("--blocks", h.blocks, "encoder blocks");
  cmd->add_option("--heads", h.heads, "attention heads");
  cmd->add_option("--head-size", h.head_size, "per-head projection width");
  cmd->add_option("--ff-dim", h.ff_dim, "feedforward width");
  cmd->add_option("--mlp", h.mlp, "MLP hidden widths")->delimiter(',');
  cmd->add_option("--dropout", h.dropout, "dropout probability");
  cmd->add_option("--ablation", h.ablation,
                  "none | no_global_tokens | no_cross_attention | no_layer_norm");
  cmd->add_option("--selection", h.selection, "model selection metric: tss | loss");
  cmd->add_option("--undersample", h.undersample, "keep at most ratio*|F| NF training instances");
  cmd->add_flag("--positional-encoding", h.positional_encoding,
                "add sinusoidal positional encoding (off by default)");
}

void apply_hyper(const CLI::App* cmd, const HyperOpts& h, json& run) {
  auto set_model = [&](const char* flag, const char* key, auto value) {
    if (cmd->count(flag)) run["model"][key] = value;
  };
  auto set_train = [&](const char* flag, const char* key, auto value) {
    if (cmd->count(flag)) run["train"][key] = value;
  };
  set_model("--tau", "tau", h.tau);
  set_model("--features", "n_features", h.features);
  set_model("--global-tokens", "global_tokens", h.global_tokens);
  set_model("--blocks", "num_blocks", h.blocks);
  set_model("--heads", "heads", h.heads);
  set_model("--head-size", "head_size", h.head_size);
  set_model("--ff-dim", "ff_dim", h.ff_dim);
  set_model("--mlp", "mlp_units", h.mlp);
  set_model("--dropout", "dropout", h.dropout);
  set_model("--ablation", "ablation", h.ablation);
  if (cmd->count("--positional-encoding")) run["model"]["positional_encoding"] = true;
  set_train("--epochs", "epochs", h.epochs);
  set_train("--batch-size", "batch_size", h.batch_size);
  set_train("--lr", "learning_rate", h.lr);
  set_train("--selection", "selection_metric", h.selection);
  set_train("--undersample", "undersample_nf_ratio", h.undersample);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GCTAF: global cross-time attention fusion for multivariate time-series "
               "classification"};
  app.require_subcommand(1);

  // --- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a planted-pattern synthetic dataset");
  CommonOpts synth_common;
  add_common(synth, synth_common);
  struct {
    size_t n = 1000, tau = 60, features = 24, m = 6, signal_features = 0, partitions = 1;
    double imbalance = 0.1, amplitude = 3.0, base_shift = 0.75, noise = 1.0, missing = 0.0;
    std::string pattern, t0;
    std::vector<size_t> partition_sizes;
  } sy;
  synth->add_option("--n", sy.n, "total instances");
  synth->add_option("--tau", sy.tau, "time steps per instance");
  synth->add_option("--features", sy.features, "features per time step");
  synth->add_option("--imbalance", sy.imbalance, "flare fraction (exact by construction)");
  synth->add_option("--pattern", sy.pattern, "dispersed | contiguous");
  synth->add_option("--m", sy.m, "signal time indices per flare instance");
  synth->add_option("--signal-features", sy.signal_features, "signal feature count (0 = auto)");
  synth->add_option("--amplitude", sy.amplitude, "bump height");
  synth->add_option("--base-shift", sy.base_shift, "constant class offset on signal features");
  synth->add_option("--noise", sy.noise, "AR(1) stationary standard deviation");
  synth->add_option("--missing", sy.missing, "missing-cell fraction");
  synth->add_option("--partitions", sy.partitions, "number of chronological partitions");
  synth->add_option("--partition-sizes", sy.partition_sizes, "explicit partition sizes")
      ->delimiter(',');
  synth->add_option("--t0", sy.t0, "first start time (ISO-8601 UTC)");

  // --- train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "preprocess and train one model");
  CommonOpts train_common;
  add_common(train, train_common);
  HyperOpts train_hyper;
  add_hyper(train, train_hyper);
  struct {
    std::string train_dir, test_dir;
    size_t impute_k = 5;
    double val_fraction = 0.2;
  } tr;
  train->add_option("--train", tr.train_dir, "training partition directory");
  train->add_option("--test", tr.test_dir, "held-out test partition directory");
  train->add_option("--impute-k", tr.impute_k, "FPCKNN neighbor count");
  train->add_option("--val-fraction", tr.val_fraction, "chronological validation tail fraction");

  // --- eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on test data");
  CommonOpts eval_common;
  add_common(eval, eval_common);
  struct {
    std::string checkpoint, norm;
    std::vector<std::string> data;
    size_t impute_k = 0;
  } ev;
  eval->add_option("--checkpoint", ev.checkpoint, "checkpoint path");
  eval->add_option("--data", ev.data, "test dataset directories")->take_all();
  eval->add_option("--norm", ev.norm, "normalization stats JSON (default <checkpoint>.norm.json)");
  eval->add_option("--impute-k", ev.impute_k, "FPCKNN neighbor count override");

  // --- ablate --------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "train and score every ablation variant");
  CommonOpts ablate_common;
  add_common(ablate, ablate_common);
  HyperOpts ablate_hyper;
  add_hyper(ablate, ablate_hyper);
  struct {
    std::string root;
    size_t seeds = 1, impute_k = 5;
    double val_fraction = 0.2;
  } ab;
  ablate->add_option("--data", ab.root, "dataset root with partition_* directories");
  ablate->add_option("--seeds", ab.seeds, "paired seed replications per variant and pair");
  ablate->add_option("--impute-k", ab.impute_k, "FPCKNN neighbor count");
  ablate->add_option("--val-fraction", ab.val_fraction, "validation tail fraction");

  // --- sweep ---------------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep", "hyperparameter grid over the first partition");
  CommonOpts sweep_common;
  add_common(sweep, sweep_common);
  HyperOpts sweep_hyper;
  add_hyper(sweep, sweep_hyper);
  struct {
    std::string root, train_dir, grid_file;
    std::vector<size_t> gsweep;
    size_t impute_k = 5;
    double val_fraction = 0.2;
  } sw;
  sweep->add_option("--data", sw.root, "dataset root with partition_* directories");
  sweep->add_option("--train", sw.train_dir, "explicit training partition directory");
  sweep->add_option("--grid", sw.grid_file, "grid JSON file (keys -> value arrays)");
  sweep->add_option("--gsweep", sw.gsweep, "global-token counts for the dedicated sweep")
      ->delimiter(',');
  sweep->add_option("--impute-k", sw.impute_k, "FPCKNN neighbor count");
  sweep->add_option("--val-fraction", sw.val_fraction, "validation tail fraction");

  // --- baseline ------------------------------------------------------------
  auto* baseline = app.add_subcommand("baseline", "vector-of-last-timestamp sanity baseline");
  CommonOpts baseline_common;
  add_common(baseline, baseline_common);
  struct {
    std::string root;
    size_t impute_k = 5;
    double val_fraction = 0.2;
  } bl;
  baseline->add_option("--data", bl.root, "dataset root with partition_* directories");
  baseline->add_option("--impute-k", bl.impute_k, "FPCKNN neighbor count");
  baseline->add_option("--val-fraction", bl.val_fraction, "validation tail fraction");

  // --- report --------------------------------------------------------------
  auto* report = app.add_subcommand("report", "aggregate metrics JSON files into mean +/- std");
  CommonOpts report_common;
  add_common(report, report_common);
  std::vector<std::string> report_inputs;
  report->add_option("--in", report_inputs, "metrics JSON files")->take_all();

  try {
    app.parse(argc, argv);

    if (synth->parsed()) {
      json run = base_run(synth, synth_common, "synth");
      auto set = [&](const char* flag, const char* key, auto value) {
        if (synth->count(flag)) run["synth"][key] = value;
      };
      set("--n", "n_instances", sy.n);
      set("--tau", "tau", sy.tau);
      set("--features", "n_features", sy.features);
      set("--imbalance", "imbalance", sy.imbalance);
      set("--pattern", "pattern", sy.pattern);
      set("--m", "signal_count", sy.m);
      set("--signal-features", "signal_features", sy.signal_features);
      set("--amplitude", "amplitude", sy.amplitude);
      set("--base-shift", "base_shift", sy.base_shift);
      set("--noise", "noise_level", sy.noise);
      set("--missing", "missing_fraction", sy.missing);
      set("--partitions", "partitions", sy.partitions);
      set("--partition-sizes", "partition_sizes", sy.partition_sizes);
      set("--t0", "t0", sy.t0);
      gctaf::cli::cmd_synth(run);
    } else if (train->parsed()) {
      json run = base_run(train, train_common, "train");
      apply_hyper(train, train_hyper, run);
      if (train->count("--train")) run["data"]["train"] = tr.train_dir;
      if (train->count("--test")) run["data"]["test"] = tr.test_dir;
      if (train->count("--impute-k")) run["data"]["impute_k"] = tr.impute_k;
      if (train->count("--val-fraction")) run["data"]["val_fraction"] = tr.val_fraction;
      gctaf::cli::cmd_train(run);
    } else if (eval->parsed()) {
      json run = base_run(eval, eval_common, "eval");
      if (eval->count("--checkpoint")) run["eval"]["checkpoint"] = ev.checkpoint;
      if (eval->count("--data")) run["eval"]["data"] = ev.data;
      if (eval->count("--norm")) run["eval"]["norm"] = ev.norm;
      if (eval->count("--impute-k")) run["eval"]["impute_k"] = ev.impute_k;
      gctaf::cli::cmd_eval(run);
    } else if (ablate->parsed()) {
      json run = base_run(ablate, ablate_common, "ablate");
      apply_hyper(ablate, ablate_hyper, run);
      if (ablate->count("--data")) run["data"]["root"] = ab.root;
      if (ablate->count("--impute-k")) run["data"]["impute_k"] = ab.impute_k;
      if (ablate->count("--val-fraction")) run["data"]["val_fraction"] = ab.val_fraction;
      if (ablate->count("--seeds")) run["ablate"]["seeds"] = ab.seeds;
      gctaf::cli::cmd_ablate(run);
    } else if (sweep->parsed()) {
      json run = base_run(sweep, sweep_common, "sweep");
      apply_hyper(sweep, sweep_hyper, run);
      if (sweep->count("--data")) run["data"]["root"] = sw.root;
      if (sweep->count("--train")) run["data"]["train"] = sw.train_dir;
      if (sweep->count("--impute-k")) run["data"]["impute_k"] = sw.impute_k;
      if (sweep->count("--val-fraction")) run["data"]["val_fraction"] = sw.val_fraction;
      if (sweep->count("--grid")) run["sweep"]["grid_file"] = sw.grid_file;
      if (sweep->count("--gsweep")) run["sweep"]["global_tokens"] = sw.gsweep;
      gctaf::cli::cmd_sweep(run);
    } else if (baseline->parsed()) {
      json run = base_run(baseline, baseline_common, "baseline");
      if (baseline->count("--data")) run["data"]["root"] = bl.root;
      if (baseline->count("--impute-k")) run["data"]["impute_k"] = bl.impute_k;
      if (baseline->count("--val-fraction")) run["data"]["val_fraction"] = bl.val_fraction;
      gctaf::cli::cmd_baseline(run);
    } else if (report->parsed()) {
      json run = base_run(report, report_common, "report");
      if (report->count("--in")) run["report"]["inputs"] = report_inputs;
      gctaf::cli::cmd_report(run);
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(gctaf::ExitCode::parse);
  } catch (const gctaf::GctafError& e) {
    gctaf::log_error("%s", e.what());
    return static_cast<int>(e.code());
  } catch (const json::exception& e) {
    gctaf::log_error("%s", e.what());
    return static_cast<int>(gctaf::ExitCode::parse);
  } catch (const std::exception& e) {
    gctaf::log_error("%s", e.what());
    return static_cast<int>(gctaf::ExitCode::failure);
  }
}
