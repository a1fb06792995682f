#pragma once

#include <string>
#include <vector>

#include "tdl/ops.hpp"
#include "tdl/rng.hpp"

// Named-parameter plumbing shared by all layers. Every layer exposes
// collect(prefix, out), which appends its parameters in a fixed order; the
// resulting name paths form a tree mirroring the module structure and drive
// the optimizer, parameter counting and checkpoint manifests.

namespace tdl {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool decay;  // false for normalization affines and bias tables
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
int64_t param_count(const ParamList<T>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

// Seeded uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
void init_uniform_fan_in(Tensor<T>& t, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (T& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
struct Linear {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out], undefined for bias-free layers

  Linear() = default;
  Linear(int64_t in, int64_t out, bool bias, Rng& rng)
      : w(Tensor<T>::zeros({in, out}, true)) {
    init_uniform_fan_in(w, in, rng);
    if (bias) b = Tensor<T>::zeros({out}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w, b); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".w", w, true});
    if (b.defined()) out.push_back({prefix + ".b", b, true});
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  T eps = T(1e-5);

  LayerNorm() = default;
  explicit LayerNorm(int64_t c)
      : gamma(Tensor<T>::full({c}, T(1), true)), beta(Tensor<T>::zeros({c}, true)) {}

  Tensor<T> forward(const Tensor<T>& x) const { return layernorm(x, gamma, beta, eps); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma, false});
    out.push_back({prefix + ".beta", beta, false});
  }
};

}  // namespace tdl
