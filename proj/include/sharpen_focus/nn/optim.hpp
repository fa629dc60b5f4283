#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "sharpen_focus/autodiff.hpp"
#include "sharpen_focus/error.hpp"
#include "sharpen_focus/nn/model.hpp"

namespace sharpen_focus::nn {

struct SgdState {
  std::vector<std::vector<double>> velocity;  // one buffer per parameter tensor
};

// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v.
// A non-finite gradient aborts the step before anything is modified.
inline void sgd_step(ParameterSet& params, const std::vector<Tensor>& grads, double lr,
                     double momentum, double weight_decay, SgdState& state) {
  if (grads.size() != params.values.size()) {
    throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.values.size()) + " parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params.values[i].shape()) {
      throw ShapeError("sgd_step: gradient shape mismatch for " + params.names[i]);
    }
    for (double g : grads[i].vec()) {
      if (!std::isfinite(g)) {
        throw NumericalError("sgd_step: non-finite gradient in " + params.names[i]);
      }
    }
  }
  if (state.velocity.size() != params.values.size()) {
    state.velocity.assign(params.values.size(), {});
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      state.velocity[i].assign(params.values[i].size(), 0.0);
    }
  }
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    std::vector<double> p = params.values[i].vec();
    auto& v = state.velocity[i];
    const auto& g = grads[i].vec();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] + g[j] + weight_decay * p[j];
      p[j] -= lr * v[j];
    }
    params.values[i] = Tensor(params.values[i].shape(), std::move(p));
  }
}

enum class ScheduleKind { kStep, kCosine };

inline ScheduleKind parse_schedule(std::string_view name) {
  if (name == "step") return ScheduleKind::kStep;
  if (name == "cosine") return ScheduleKind::kCosine;
  throw ConfigError("unknown schedule '" + std::string(name) + "' (expected step|cosine)");
}

inline std::string_view schedule_name(ScheduleKind kind) {
  return kind == ScheduleKind::kStep ? "step" : "cosine";
}

// step:   base * 0.1^(milestones already reached)
// cosine: single-cycle annealing, base * (1 + cos(pi * epoch / total)) / 2
inline double lr_schedule(ScheduleKind kind, std::size_t epoch, std::size_t total_epochs,
                          double base_lr, const std::vector<std::size_t>& milestones = {}) {
  if (epoch >= total_epochs) {
    throw ConfigError("lr_schedule: epoch " + std::to_string(epoch) + " >= total " +
                      std::to_string(total_epochs));
  }
  switch (kind) {
    case ScheduleKind::kStep: {
      double lr = base_lr;
      for (std::size_t m : milestones) {
        if (epoch >= m) lr *= 0.1;
      }
      return lr;
    }
    case ScheduleKind::kCosine:
      return base_lr *
             (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                             static_cast<double>(total_epochs))) /
             2.0;
  }
  throw ConfigError("lr_schedule: unknown kind");
}

inline double lr_schedule(std::string_view kind, std::size_t epoch, std::size_t total_epochs,
                          double base_lr, const std::vector<std::size_t>& milestones = {}) {
  return lr_schedule(parse_schedule(kind), epoch, total_epochs, base_lr, milestones);
}

}  // namespace sharpen_focus::nn
