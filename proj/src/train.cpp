#include "homotion/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "homotion/errors.hpp"
#include "homotion/io.hpp"

namespace homotion::train {

namespace fs = std::filesystem;
using nlohmann::json;
using dataset::InteractionWindow;

void AdamConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must be in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
}

AdamState adam_init(const NamedTensors& params) {
  AdamState s;
  for (const auto& [_, p] : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(const NamedTensors& params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam state holds " + std::to_string(state.m.size()) + " entries for " +
                        std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    if (state.m[i].size() != p.numel() || state.v[i].size() != p.numel()) {
      throw ContractError("adam state shape mismatch for " + name);
    }
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + name);
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto x = p.data();
    const bool has = p.has_grad();
    const auto g = p.grad();
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      x[j] -= cfg.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
    }
  }
}

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.adam.learning_rate},
          {"betas", {c.adam.beta1, c.adam.beta2}},
          {"eps", c.adam.eps},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"checkpoint_dir", c.checkpoint_dir.string()},
          {"restore_best", c.restore_best}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  const json defaults = to_json(TrainConfig{});
  for (const auto& [k, _] : j.items()) {
    if (!defaults.contains(k)) throw ConfigError("unknown train option '" + k + "'");
  }
  TrainConfig c;
  try {
    c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
    if (j.contains("betas")) {
      const auto& b = j.at("betas");
      if (!b.is_array() || b.size() != 2) throw ConfigError("betas must be a pair");
      c.adam.beta1 = b[0].get<double>();
      c.adam.beta2 = b[1].get<double>();
    }
    c.adam.eps = j.value("eps", c.adam.eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_dir = j.value("checkpoint_dir", std::string());
    c.restore_best = j.value("restore_best", c.restore_best);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::vector<const InteractionWindow*> gather(const std::vector<InteractionWindow>& windows,
                                             const std::vector<std::size_t>& order, std::size_t begin,
                                             std::size_t end) {
  std::vector<const InteractionWindow*> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(&windows[order[i]]);
  return out;
}

std::vector<std::vector<double>> snapshot(const NamedTensors& list) {
  std::vector<std::vector<double>> out;
  for (const auto& [_, t] : list) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void restore(const NamedTensors& list, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < list.size(); ++i) {
    Tensor t = list[i].second;
    std::copy(values[i].begin(), values[i].end(), t.data().begin());
  }
}

void check_finite(double loss, const std::string& where) {
  if (!std::isfinite(loss)) throw NumericError("non-finite loss " + where);
}

}  // namespace

double evaluate_loss(model::HOGCNModel& model, const std::vector<InteractionWindow>& windows,
                     const dataset::DescriptorRegistry* descriptors, std::size_t batch_size) {
  if (windows.empty()) throw ConfigError("cannot evaluate the loss on an empty split");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  const bool was_training = model.training();
  model.set_training(false);
  tensor::NoGradScope no_grad;
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  double sum = 0.0;
  for (std::size_t b = 0; b < windows.size(); b += batch_size) {
    const std::size_t e = std::min(windows.size(), b + batch_size);
    const auto batch = model::make_batch(gather(windows, order, b, e), descriptors, model.config());
    sum += model.loss(model.forward(batch), batch).total.item() * static_cast<double>(e - b);
  }
  model.set_training(was_training);
  return sum / static_cast<double>(windows.size());
}

TrainResult train(model::HOGCNModel& model, const std::vector<InteractionWindow>& train_set,
                  const std::vector<InteractionWindow>& val_set, const dataset::DescriptorRegistry* descriptors,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training split is empty");
  if (val_set.empty()) throw ConfigError("validation split is empty");
  const auto params = model.parameters();
  const auto buffers = model.buffers();
  AdamState state = adam_init(params);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::vector<std::vector<double>> best_params, best_buffers;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    model.set_training(true);
    double sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const auto batch = model::make_batch(gather(train_set, order, b, e), descriptors, model.config());
      for (const auto& [_, p] : params) Tensor(p).zero_grad();
      tensor::Tape tape;
      double loss = 0.0;
      {
        tensor::TapeScope scope(tape);
        const auto terms = model.loss(model.forward(batch), batch);
        loss = terms.total.item();
        check_finite(loss, "in epoch " + std::to_string(epoch));
        tape.backward(terms.total);
      }
      adam_step(params, state, cfg.adam);
      sum += loss * static_cast<double>(e - b);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = sum / static_cast<double>(order.size());
    rec.val_loss = evaluate_loss(model, val_set, descriptors, cfg.batch_size);
    check_finite(rec.val_loss, "on validation in epoch " + std::to_string(epoch));
    rec.improved = result.curves.empty() || rec.val_loss < result.best_val_loss;
    if (rec.improved) {
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
      stale = 0;
      best_params = snapshot(params);
      best_buffers = snapshot(buffers);
      if (!cfg.checkpoint_dir.empty()) {
        model.save(cfg.checkpoint_dir / "best",
                   {{"epoch", epoch}, {"train_loss", rec.train_loss}, {"val_loss", rec.val_loss}});
      }
    } else {
      ++stale;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.curves.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stale > cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (!cfg.checkpoint_dir.empty()) {
    const auto& last = result.curves.back();
    model.save(cfg.checkpoint_dir / "last",
               {{"epoch", last.epoch}, {"train_loss", last.train_loss}, {"val_loss", last.val_loss}});
    write_curves(cfg.checkpoint_dir / "curves.csv", result.curves);
  }
  if (cfg.restore_best) {
    restore(params, best_params);
    restore(buffers, best_buffers);
  }
  model.set_training(false);
  for (const auto& [_, p] : params) Tensor(p).zero_grad();
  return result;
}

std::string curves_csv(const std::vector<EpochRecord>& curves) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss\n";
  for (const auto& r : curves) {
    os << r.epoch << ',' << io::format_double(r.train_loss) << ',' << io::format_double(r.val_loss) << '\n';
  }
  return os.str();
}

void write_curves(const fs::path& path, const std::vector<EpochRecord>& curves) {
  io::write_text(path, curves_csv(curves));
}

}  // namespace homotion::train
