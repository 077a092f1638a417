#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "plugs/optimizer.hpp"
#include "plugs/tensor.hpp"

namespace plugs {

// Finite-difference verification of reverse-mode gradients.
//
// `fn` must build the loss graph from `params` (recording onto the active
// tape when one is set) and return the scalar loss tensor. It must be
// deterministic: gradient_check evaluates it twice up front and refuses to
// proceed if the two values differ, which is what a dropout-enabled forward
// produces.

struct GradCheckEntry {
  std::string param;
  size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool passed = false;
  double tolerance = 0.0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // 0 = check every coordinate; otherwise sample this many coordinates per
  // parameter tensor (deterministically, from `seed`).
  size_t coords_per_param = 0;
  uint64_t seed = 17;
};

inline double gradcheck_rel_err(double g_ad, double g_fd) {
  return std::abs(g_ad - g_fd) /
         std::max({std::abs(g_ad), std::abs(g_fd), 1e-8});
}

inline GradCheckReport gradient_check(
    const std::function<Tensor(const ParamMap&)>& fn, ParamMap& params,
    const GradCheckOptions& opt = {}) {
  // Determinism probe (no tape).
  double f1 = fn(params)[0];
  double f2 = fn(params)[0];
  if (f1 != f2)
    throw ConfigError(
        "gradient_check: fn is not deterministic (disable dropout)");

  for (auto& [name, p] : params) p.zero_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor loss = fn(params);
    backward(tape, loss);
  }

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    std::vector<double> analytic = p.grad();
    std::vector<size_t> coords;
    if (opt.coords_per_param == 0 || p.size() <= opt.coords_per_param) {
      coords.resize(p.size());
      for (size_t i = 0; i < p.size(); ++i) coords[i] = i;
    } else {
      Rng rng(hash_str(opt.seed, name));
      for (size_t i = 0; i < opt.coords_per_param; ++i)
        coords.push_back(rng.next_below(p.size()));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    std::vector<double>& w = p.mutable_data();
    for (size_t idx : coords) {
      const double orig = w[idx];
      auto central_diff = [&](double eps) {
        w[idx] = orig + eps;
        double fp = fn(params)[0];
        w[idx] = orig - eps;
        double fm = fn(params)[0];
        w[idx] = orig;
        return (fp - fm) / (2.0 * eps);
      };
      GradCheckEntry e;
      e.param = name;
      e.index = idx;
      e.analytic = analytic[idx];
      e.numeric = central_diff(opt.epsilon);
      e.rel_err = gradcheck_rel_err(e.analytic, e.numeric);
      // A central difference is only trustworthy away from activation kinks
      // (error grows with eps) and the rounding floor (error grows as eps
      // shrinks). When the primary step disagrees, re-estimate on both sides
      // of it; a genuine backward-pass bug disagrees at every step size.
      if (e.rel_err > opt.tolerance) {
        for (double eps : {opt.epsilon * 0.1, opt.epsilon * 10.0}) {
          double numeric = central_diff(eps);
          double rel = gradcheck_rel_err(e.analytic, numeric);
          if (rel < e.rel_err) {
            e.rel_err = rel;
            e.numeric = numeric;
          }
        }
      }
      report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
      report.entries.push_back(std::move(e));
    }
    p.zero_grad();
  }
  report.passed = report.max_rel_err <= opt.tolerance;
  return report;
}

}  // namespace plugs
