#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "homotion/dataset.hpp"
#include "homotion/model.hpp"
#include "homotion/tensor/tensor.hpp"

namespace homotion::train {

using tensor::Tensor;
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct AdamState {
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Zero moments for every parameter, t = 0.
AdamState adam_init(const NamedTensors& params);

// One bias-corrected Adam update from the accumulated gradients. A parameter
// without a gradient is treated as having a zero gradient. A non-finite
// gradient raises NumericError naming the parameter before anything changes.
void adam_step(const NamedTensors& params, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;  // non-improving epochs tolerated before stopping
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint_dir;  // empty: keep the best state in memory only
  bool restore_best = true;  // load the best parameters back into the model at the end

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Strict: unknown keys are a ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> curves;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Per-sample mean of the total loss over `windows` in evaluation mode.
double evaluate_loss(model::HOGCNModel& model, const std::vector<dataset::InteractionWindow>& windows,
                     const dataset::DescriptorRegistry* descriptors, std::size_t batch_size);

// Mini-batch training with a seeded shuffle per epoch and validation after
// every epoch. The train loss of an epoch is the per-sample mean of the batch
// losses seen during that epoch. When `checkpoint_dir` is set, `best/` holds
// the best-on-validation model and `last/` the final one.
TrainResult train(model::HOGCNModel& model, const std::vector<dataset::InteractionWindow>& train_set,
                  const std::vector<dataset::InteractionWindow>& val_set,
                  const dataset::DescriptorRegistry* descriptors, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Header: epoch,train_loss,val_loss.
std::string curves_csv(const std::vector<EpochRecord>& curves);
void write_curves(const std::filesystem::path& path, const std::vector<EpochRecord>& curves);

}  // namespace homotion::train
