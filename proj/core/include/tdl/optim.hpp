#pragma once

#include <cmath>
#include <map>

#include "tdl/params.hpp"

// Momentum SGD with decoupled weight decay (the decay term bypasses the loss
// graph and the momentum buffer) and the polynomial learning-rate schedule.

namespace tdl {

// lr(0) = base, lr(total) = 0.
inline double poly_lr(double base, int64_t step, int64_t total_steps, double power) {
  if (total_steps <= 0) return base;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return base * std::pow(std::max(0.0, frac), power);
}

template <typename T>
class Sgd {
 public:
  Sgd() = default;
  Sgd(ParamList<T> params, T momentum, T weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i)
      velocity_[i].assign(static_cast<size_t>(params_[i].tensor.numel()), T(0));
  }

  // v = mu*v + g; p -= lr*v; then p -= lr*wd*p for decay-flagged parameters.
  void step(T lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto data = p.tensor.mutable_data();
      auto& vel = velocity_[i];
      const auto g = p.tensor.grad();
      for (size_t j = 0; j < data.size(); ++j) {
        const T gj = g.empty() ? T(0) : g[j];
        vel[j] = momentum_ * vel[j] + gj;
        data[j] -= lr * vel[j];
        if (p.decay && weight_decay_ != T(0)) data[j] -= lr * weight_decay_ * data[j];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  const ParamList<T>& params() const { return params_; }

  // Momentum buffers as named tensors for checkpointing.
  ParamList<T> state_params() const {
    ParamList<T> out;
    out.reserve(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor<T> t(params_[i].tensor.shape(), velocity_[i]);
      out.push_back({"momentum." + params_[i].name, t, false});
    }
    return out;
  }

  // Restores momentum buffers from a name -> flat-data map (missing entries
  // reset to zero, extra entries are rejected by the caller's manifest check).
  void load_state(const std::map<std::string, std::vector<T>>& state) {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto it = state.find("momentum." + params_[i].name);
      if (it == state.end()) continue;
      if (it->second.size() != velocity_[i].size())
        throw IoError(strcat_msg("checkpoint: momentum buffer for '", params_[i].name,
                                 "' has ", it->second.size(), " elements, expected ",
                                 velocity_[i].size()));
      velocity_[i] = it->second;
    }
  }

 private:
  ParamList<T> params_;
  std::vector<std::vector<T>> velocity_;
  T momentum_ = T(0);
  T weight_decay_ = T(0);
};

}  // namespace tdl
