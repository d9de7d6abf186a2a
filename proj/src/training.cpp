#include "gctaf/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "gctaf/errors.hpp"
#include "gctaf/log.hpp"

namespace gctaf {

void TrainConfig::validate() const {
  // learning_rate 0 is allowed and means a frozen model; useful as a control.
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (eps <= 0.0) throw ConfigError("Adam eps must be > 0");
  if (selection_metric != "tss" && selection_metric != "loss") {
    throw ConfigError("selection_metric must be 'tss' or 'loss'");
  }
  if (undersample_nf_ratio < 0.0) throw ConfigError("undersample_nf_ratio must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {
      {"learning_rate", learning_rate},
      {"epochs", epochs},
      {"batch_size", batch_size},
      {"beta1", beta1},
      {"beta2", beta2},
      {"eps", eps},
      {"selection_metric", selection_metric},
      {"seed", seed},
      {"undersample_nf_ratio", undersample_nf_ratio},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const char* known[] = {"learning_rate", "epochs", "batch_size",
                                "beta1",         "beta2",  "eps",
                                "selection_metric", "seed", "undersample_nf_ratio"};
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* key : known) ok = ok || item.key() == key;
    if (!ok) throw ConfigError("unknown train config key '" + item.key() + "'");
  }
  TrainConfig cfg;
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.eps = j.value("eps", cfg.eps);
  cfg.selection_metric = j.value("selection_metric", cfg.selection_metric);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.undersample_nf_ratio = j.value("undersample_nf_ratio", cfg.undersample_nf_ratio);
  cfg.validate();
  return cfg;
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy_loss expects [batch, classes] logits; got " +
                         shape_str(logits.shape()));
  }
  size_t batch = logits.shape()[0];
  size_t classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw ContractError("cross_entropy_loss: " + std::to_string(labels.size()) +
                        " labels for batch of " + std::to_string(batch));
  }
  std::vector<double> onehot(batch * classes, 0.0);
  for (size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<size_t>(labels[i]) >= classes) {
      throw ContractError("cross_entropy_loss: label " + std::to_string(labels[i]) +
                          " out of range [0, " + std::to_string(classes) + ")");
    }
    onehot[i * classes + static_cast<size_t>(labels[i])] = 1.0;
  }
  Tensor mask = Tensor::from_data({batch, classes}, std::move(onehot));
  Tensor log_probs = log_softmax(logits, 1);
  return scale(sum_all(mul(log_probs, mask)), -1.0 / static_cast<double>(batch));
}

Adam::Adam(std::vector<Tensor> params, double learning_rate, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    auto g = p.grad();
    if (g.empty()) continue;  // zero gradient everywhere: no update needed
    double* w = p.mutable_data();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw DimensionError("argmax_rows expects [batch, classes]; got " + shape_str(logits.shape()));
  }
  size_t batch = logits.shape()[0];
  size_t classes = logits.shape()[1];
  auto data = logits.data();
  std::vector<int> out(batch, 0);
  for (size_t i = 0; i < batch; ++i) {
    size_t best = 0;
    for (size_t c = 1; c < classes; ++c) {
      // Strict inequality resolves exact ties to the lowest class id (NF).
      if (data[i * classes + c] > data[i * classes + best]) best = c;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

Tensor batch_tensor(const BinaryDataset& data, std::span<const size_t> indices) {
  size_t slab = data.tau * data.n_features;
  std::vector<double> values(indices.size() * slab);
  for (size_t i = 0; i < indices.size(); ++i) {
    const auto& inst = data.instances[indices[i]];
    std::copy(inst.values.begin(), inst.values.end(), values.begin() + static_cast<ptrdiff_t>(i * slab));
  }
  return Tensor::from_data({indices.size(), data.tau, data.n_features}, std::move(values));
}

EvalResult evaluate(const GctafParams& params, const ModelConfig& cfg, const BinaryDataset& data,
                    size_t batch_size) {
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  Rng unused(0);  // dropout is off in eval mode; no draws happen
  ConfusionMatrix cm;
  double loss_sum = 0.0;
  for (size_t begin = 0; begin < data.size(); begin += batch_size) {
    size_t end = std::min(begin + batch_size, data.size());
    std::vector<size_t> indices(end - begin);
    std::iota(indices.begin(), indices.end(), begin);
    Tensor x = batch_tensor(data, indices);
    Tensor logits = forward(params, cfg, x, /*training=*/false, unused);
    std::vector<int> labels(data.labels.begin() + static_cast<ptrdiff_t>(begin),
                            data.labels.begin() + static_cast<ptrdiff_t>(end));
    Tensor loss = cross_entropy_loss(logits, labels);
    loss_sum += loss.value() * static_cast<double>(end - begin);
    std::vector<int> preds = argmax_rows(logits);
    cm.add(confusion(preds, labels));
  }
  EvalResult result;
  result.metrics = report(cm);
  result.loss = loss_sum / static_cast<double>(data.size());
  return result;
}

namespace {

struct Selection {
  size_t epoch = 0;
  std::optional<double> value;  // tss mode
  double loss = 0.0;            // loss mode

  bool improves(const std::string& metric, std::optional<double> tss_value, double loss_value,
                bool first) const {
    if (first) return true;
    if (metric == "loss") return loss_value < loss;
    if (!tss_value.has_value()) return false;
    if (!value.has_value()) return true;
    return *tss_value > *value;
  }
};

}  // namespace

std::pair<GctafParams, TrainReport> train(const ModelConfig& model_cfg,
                                          const TrainConfig& train_cfg,
                                          const BinaryDataset& train_set,
                                          const BinaryDataset& val_set) {
  model_cfg.validate();
  train_cfg.validate();
  if (train_set.size() == 0) throw ContractError("train: empty training set");

  Rng init_rng(model_cfg.seed);
  GctafParams params = init_params(model_cfg, init_rng);
  Adam optimizer(params.parameters(), train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2,
                 train_cfg.eps);
  Rng master(train_cfg.seed);

  std::vector<size_t> pool(train_set.size());
  std::iota(pool.begin(), pool.end(), 0);
  if (train_cfg.undersample_nf_ratio > 0.0) {
    std::vector<size_t> flare, quiet;
    for (size_t i : pool) (train_set.labels[i] == 1 ? flare : quiet).push_back(i);
    size_t keep = static_cast<size_t>(
        std::llround(train_cfg.undersample_nf_ratio * static_cast<double>(flare.size())));
    if (keep < quiet.size()) {
      Rng under = master.split("undersample");
      under.shuffle(quiet.begin(), quiet.end());
      quiet.resize(keep);
      pool = flare;
      pool.insert(pool.end(), quiet.begin(), quiet.end());
      std::sort(pool.begin(), pool.end());
      log_info("undersampled NF: %zu kept of %zu (ratio %.2f)", keep, train_set.size() - flare.size(),
               train_cfg.undersample_nf_ratio);
    }
  }

  TrainReport report_out;
  GctafParams best = params.clone();
  Selection best_sel;
  bool have_best = false;

  for (size_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<size_t> order = pool;
    Rng shuffle_rng = master.split("shuffle").split(epoch);
    shuffle_rng.shuffle(order.begin(), order.end());

    Rng dropout_epoch = master.split("dropout").split(epoch);
    double loss_sum = 0.0;
    size_t seen = 0;
    size_t batch_index = 0;
    for (size_t begin = 0; begin < order.size(); begin += train_cfg.batch_size, ++batch_index) {
      size_t end = std::min(begin + train_cfg.batch_size, order.size());
      std::span<const size_t> indices(order.data() + begin, end - begin);
      Tensor x = batch_tensor(train_set, indices);
      std::vector<int> labels;
      labels.reserve(indices.size());
      for (size_t i : indices) labels.push_back(train_set.labels[i]);

      Rng dropout_rng = dropout_epoch.split(batch_index);
      Tensor logits = forward(params, model_cfg, x, /*training=*/true, dropout_rng);
      Tensor loss = cross_entropy_loss(logits, labels);
      double loss_value = loss.value();
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index));
      }
      loss_sum += loss_value * static_cast<double>(indices.size());
      seen += indices.size();

      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
    }

    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(seen);
    if (val_set.size() > 0) {
      EvalResult val = evaluate(params, model_cfg, val_set);
      row.val_loss = val.loss;
      row.val_tss = val.metrics.tss;
      row.val_hss2 = val.metrics.hss2;
      row.val_gs = val.metrics.gs;
      row.val_acc = val.metrics.accuracy;
      if (best_sel.improves(train_cfg.selection_metric, val.metrics.tss, val.loss, !have_best)) {
        best = params.clone();
        best_sel.epoch = epoch;
        best_sel.value = val.metrics.tss;
        best_sel.loss = val.loss;
        have_best = true;
      }
    } else {
      // No validation data: the final epoch is the checkpoint.
      best = params.clone();
      best_sel.epoch = epoch;
      have_best = true;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_debug("epoch %zu: train_loss %.6f val_loss %.6f (%.2fs)", epoch, row.train_loss,
              row.val_loss, row.seconds);
    report_out.rows.push_back(row);
  }
  report_out.selected_epoch = best_sel.epoch;
  return {std::move(best), std::move(report_out)};
}

MetricsReport vlt_baseline(const BinaryDataset& train_set, const BinaryDataset& test_set,
                           uint64_t seed) {
  if (train_set.size() == 0 || test_set.size() == 0) {
    throw ContractError("vlt_baseline: empty dataset");
  }
  size_t n = train_set.n_features;
  auto last_step = [n](const BinaryDataset& data) {
    std::vector<double> rows(data.size() * n);
    for (size_t i = 0; i < data.size(); ++i) {
      const auto& inst = data.instances[i];
      for (size_t f = 0; f < n; ++f) rows[i * n + f] = inst.at(inst.tau - 1, f);
    }
    return Tensor::from_data({data.size(), n}, std::move(rows));
  };

  Rng rng(seed);
  double bound = 1.0 / std::sqrt(static_cast<double>(n));
  Tensor w = Tensor::uniform({n, 2}, -bound, bound, rng).set_requires_grad();
  Tensor b = Tensor::zeros({2}).set_requires_grad();
  Adam optimizer({w, b}, 0.05);

  Tensor x_train = last_step(train_set);
  const size_t epochs = 300;
  for (size_t epoch = 0; epoch < epochs; ++epoch) {
    Tensor loss = cross_entropy_loss(linear(x_train, w, b), train_set.labels);
    if (!std::isfinite(loss.value())) {
      throw NumericError("non-finite VLT loss at epoch " + std::to_string(epoch));
    }
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
  }

  Tensor logits = linear(last_step(test_set), w, b);
  std::vector<int> preds = argmax_rows(logits);
  return report(confusion(preds, test_set.labels));
}

void write_train_report_csv(const TrainReport& report, const std::string& path) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  file << "epoch,train_loss,val_loss,val_tss,val_hss2,val_gs,val_acc\n";
  char buf[32];
  auto cell = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    file << buf;
  };
  auto opt_cell = [&](const std::optional<double>& v) {
    if (v.has_value()) cell(*v);
  };
  for (const auto& row : report.rows) {
    file << row.epoch << ',';
    cell(row.train_loss);
    file << ',';
    cell(row.val_loss);
    file << ',';
    opt_cell(row.val_tss);
    file << ',';
    opt_cell(row.val_hss2);
    file << ',';
    opt_cell(row.val_gs);
    file << ',';
    opt_cell(row.val_acc);
    file << '\n';
  }
  if (!file) throw IoError("failed writing '" + path + "'");
}

}  // namespace gctaf
