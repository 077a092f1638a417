#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "plugs/common.hpp"
#include "plugs/tensor.hpp"

namespace plugs {

using ParamMap = std::map<std::string, Tensor>;

enum class OptKind { sgd, adam };

inline std::string to_string(OptKind k) {
  return k == OptKind::sgd ? "sgd" : "adam";
}

inline OptKind opt_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptKind::sgd;
  if (s == "adam") return OptKind::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

// Linear warmup to base_lr over warmup_steps, then exponential decay with
// the given rate per decay_steps. Continuous at the warmup boundary.
struct ScheduleConfig {
  double base_lr = 1e-3;
  int64_t warmup_steps = 16000;
  int64_t decay_steps = 50000;
  double decay_rate = 0.5;

  void validate() const {
    if (base_lr <= 0.0) throw ConfigError("schedule: base_lr must be positive");
    if (warmup_steps <= 0)
      throw ConfigError("schedule: warmup_steps must be positive");
    if (decay_steps <= 0)
      throw ConfigError("schedule: decay_steps must be positive");
    if (decay_rate <= 0.0 || decay_rate >= 1.0)
      throw ConfigError("schedule: decay_rate must be in (0,1)");
  }
};

inline double schedule_lr(const ScheduleConfig& cfg, int64_t step) {
  cfg.validate();
  if (step < 0) throw ConfigError("schedule_lr: negative step");
  if (step <= cfg.warmup_steps) {
    return cfg.base_lr * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  }
  double progress = static_cast<double>(step - cfg.warmup_steps) /
                    static_cast<double>(cfg.decay_steps);
  return cfg.base_lr * std::pow(cfg.decay_rate, progress);
}

struct TrainConfig {
  OptKind optimizer = OptKind::adam;
  ScheduleConfig schedule;
  double l2_weight = 0.0;
  int64_t batch_size = 16;
  double dropout = 0.0;
  uint64_t seed = 1;

  void validate() const {
    schedule.validate();
    if (l2_weight < 0.0) throw ConfigError("train: l2_weight must be >= 0");
    if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("train: dropout must be in [0,1)");
  }
};

// Named presets. The lr values are the default points of the corresponding
// hyperparameter search ranges; overrides come from the run config.
inline TrainConfig train_preset(const std::string& name) {
  TrainConfig c;
  if (name == "multi30k") {
    c.optimizer = OptKind::adam;
    c.schedule = {3e-4, 16000, 50000, 0.5};
    c.l2_weight = 5e-6;
    c.batch_size = 1024;
    c.dropout = 0.3;
  } else if (name == "cc_base") {
    c.optimizer = OptKind::sgd;
    c.schedule = {0.12, 16000, 350000, 0.5};
    c.l2_weight = 1e-5;
    c.batch_size = 4096;
    c.dropout = 0.3;
  } else if (name == "cc_multilingual") {
    c.optimizer = OptKind::sgd;
    c.schedule = {0.12, 80000, 350000, 0.5};
    c.l2_weight = 1e-5;
    c.batch_size = 4096;
    c.dropout = 0.3;
  } else if (name == "cc_large") {
    c.optimizer = OptKind::sgd;
    c.schedule = {0.09, 80000, 350000, 0.5};
    c.l2_weight = 1e-5;
    c.batch_size = 4096;
    c.dropout = 0.3;
  } else if (name == "desk") {
    c.optimizer = OptKind::adam;
    c.schedule = {2e-3, 100, 4000, 0.5};
    c.l2_weight = 1e-6;
    c.batch_size = 16;
    c.dropout = 0.1;
  } else {
    throw ConfigError("unknown train preset '" + name + "'");
  }
  return c;
}

}  // namespace plugs
