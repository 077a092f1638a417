#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "plugs/schedule.hpp"
#include "plugs/tensor.hpp"

namespace plugs {

// Adam moments per parameter name. adam_t counts applied Adam updates and
// drives bias correction; SGD keeps no state (momentum 0).
struct OptState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  int64_t adam_t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.98;
inline constexpr double kAdamEps = 1e-9;

// Parameters are snapped to float32-representable values so that the
// float32 checkpoint encoding is lossless.
inline double snap_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline void snap_params_f32(ParamMap& params) {
  for (auto& [name, t] : params) {
    for (double& x : t.mutable_data()) x = snap_f32(x);
  }
}

// One update over every parameter, reading gradients from the tensors' grad
// buffers. Applies the scheduled lr and decoupled L2 weight decay, then
// zeroes the consumed gradients.
inline void optimizer_step(OptState& state, ParamMap& params,
                           const TrainConfig& cfg, int64_t step) {
  cfg.validate();
  const double lr = schedule_lr(cfg.schedule, step);
  if (cfg.optimizer == OptKind::adam) state.adam_t += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.adam_t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.adam_t));

  for (auto& [name, p] : params) {
    std::vector<double> g = p.grad();
    for (double x : g) {
      if (!std::isfinite(x))
        throw NumericError("optimizer_step: non-finite gradient in " + name);
    }
    std::vector<double>& w = p.mutable_data();
    if (cfg.optimizer == OptKind::sgd) {
      for (size_t i = 0; i < w.size(); ++i) {
        w[i] = snap_f32(w[i] - lr * g[i] - lr * cfg.l2_weight * w[i]);
      }
    } else {
      std::vector<double>& m = state.m[name];
      std::vector<double>& v = state.v[name];
      if (m.empty()) m.assign(w.size(), 0.0);
      if (v.empty()) v.assign(w.size(), 0.0);
      for (size_t i = 0; i < w.size(); ++i) {
        // Moments are also float32-snapped so checkpointed optimizer state
        // resumes bit-exactly.
        m[i] = snap_f32(kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i]);
        v[i] = snap_f32(kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i]);
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        w[i] = snap_f32(w[i] - lr * mhat / (std::sqrt(vhat) + kAdamEps) -
                        lr * cfg.l2_weight * w[i]);
      }
    }
    p.zero_grad();
  }
}

}  // namespace plugs
