#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gctaf/data.hpp"
#include "gctaf/metrics.hpp"
#include "gctaf/model.hpp"
#include "gctaf/tensor.hpp"

#include "json.hpp"

namespace gctaf {

struct TrainConfig {
  double learning_rate = 1e-4;
  size_t epochs = 20;
  size_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::string selection_metric = "tss";  // "tss" (maximize) or "loss" (minimize)
  uint64_t seed = 42;
  // NF undersampling: keep at most ratio * |F| non-flare training instances
  // (seeded, without replacement). 0 disables.
  double undersample_nf_ratio = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRow {
  size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_tss, val_hss2, val_gs, val_acc;
  double seconds = 0.0;  // wall clock; never serialized
};

struct TrainReport {
  std::vector<EpochRow> rows;
  size_t selected_epoch = 0;
};

// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

// Bias-corrected Adam over a fixed parameter list. step() consumes the
// accumulated gradients; call zero_grad() before the next backward pass.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();
  size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  size_t t_ = 0;
};

// Argmax per row; ties resolve to class 0 (NF).
std::vector<int> argmax_rows(const Tensor& logits);

struct EvalResult {
  MetricsReport metrics;
  double loss = 0.0;
};

// Dropout-off inference over the dataset in fixed order.
EvalResult evaluate(const GctafParams& params, const ModelConfig& cfg, const BinaryDataset& data,
                    size_t batch_size = 64);

// Mini-batch training with per-epoch seeded shuffling and dropout-off
// validation after each epoch; returns the checkpoint of the best epoch by
// the selection metric (ties -> earliest) plus the per-epoch report.
std::pair<GctafParams, TrainReport> train(const ModelConfig& model_cfg,
                                          const TrainConfig& train_cfg,
                                          const BinaryDataset& train_set,
                                          const BinaryDataset& val_set);

// Logistic classifier on the final timestep's feature vector, trained
// full-batch with the same optimizer. The sanity baseline.
MetricsReport vlt_baseline(const BinaryDataset& train_set, const BinaryDataset& test_set,
                           uint64_t seed = 42);

// Report CSV: epoch,train_loss,val_loss,val_tss,val_hss2,val_gs,val_acc.
// Undefined metrics serialize as empty cells.
void write_train_report_csv(const TrainReport& report, const std::string& path);

// [count, tau, n] batch tensor from dataset rows.
Tensor batch_tensor(const BinaryDataset& data, std::span<const size_t> indices);

}  // namespace gctaf
