#pragma once

#include "tdl/encdec.hpp"

// Swin spatial pyramid pooling — parallel swin block pairs with different
// window sizes over the same grid — and the two-stage cross-contextual
// attention that fuses the concatenated pyramid: channel-wise gating from a
// token-pooled descriptor, then token-wise gating from a channel-pooled
// descriptor, both through small sigmoid-gated MLPs.

namespace tdl {

// Parallel branches with separate parameters; level m applies a swin block
// pair with window size windows[m]. Resolution and channels are unchanged.
template <typename T>
struct Sspp {
  std::vector<SwinBlockPair<T>> branches;

  Sspp() = default;
  Sspp(int64_t grid_h, int64_t grid_w, int64_t dim, int64_t heads,
       const std::vector<int64_t>& windows, int64_t mlp_ratio, Rng& rng) {
    for (int64_t m : windows)
      branches.emplace_back(grid_h, grid_w, dim, heads, m, mlp_ratio, rng);
  }

  std::vector<Tensor<T>> forward(const StageOutput<T>& x) const {
    std::vector<Tensor<T>> levels;
    levels.reserve(branches.size());
    for (const auto& b : branches) levels.push_back(b.forward(x.tokens));
    return levels;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (size_t i = 0; i < branches.size(); ++i)
      branches[i].collect(strcat_msg(prefix, ".branch", i), out);
  }
};

// Channel gating: pool z_all over the token axis, pass the [B,1,MC]
// descriptor through W1 -> ReLU -> W2 -> sigmoid, and scale every token's
// channels by the resulting weights. Returns (w_scale, z_all * w_scale).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> scale_attention(const Tensor<T>& z_all,
                                                const Tensor<T>& w1, const Tensor<T>& b1,
                                                const Tensor<T>& w2,
                                                const Tensor<T>& b2) {
  Tensor<T> gap = mean(z_all, {1}, true);                     // [B, 1, MC]
  Tensor<T> w_scale = sigmoid(linear(relu(linear(gap, w1, b1)), w2, b2));
  return {w_scale, mul(w_scale, z_all)};
}

// Token gating: pool over the channel axis, pass each token's [B,P,1] scalar
// through W4 -> ReLU -> W3 -> sigmoid, and scale every channel of the token.
// Returns (w_tokens, z * w_tokens).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> token_attention(const Tensor<T>& z,
                                                const Tensor<T>& w4, const Tensor<T>& b4,
                                                const Tensor<T>& w3,
                                                const Tensor<T>& b3) {
  Tensor<T> gap = mean(z, {2}, true);                         // [B, P, 1]
  Tensor<T> w_tokens = sigmoid(linear(relu(linear(gap, w4, b4)), w3, b3));
  return {w_tokens, mul(w_tokens, z)};
}

// The fused pyramid with both gate tensors kept for inspection;
// z_out == w_tokens * (w_scale * z_all) elementwise with broadcasting.
template <typename T>
struct FusedFeatures {
  Tensor<T> z_all;     // [B, P, MC]
  Tensor<T> w_scale;   // [B, 1, MC]
  Tensor<T> w_tokens;  // [B, P, 1]
  Tensor<T> z_out;     // [B, P, MC]
};

template <typename T>
struct CrossContextualAttention {
  int64_t mc = 0, out_dim = 0;
  Tensor<T> w1, b1, w2, b2;  // channel path: MC -> MC/rho -> MC
  Tensor<T> w4, b4, w3, b3;  // token path: 1 -> rho -> 1
  Linear<T> proj;            // MC -> C, bias

  CrossContextualAttention() = default;
  CrossContextualAttention(int64_t mc_, int64_t out_dim_, int64_t rho, Rng& rng)
      : mc(mc_), out_dim(out_dim_), proj(mc_, out_dim_, true, rng) {
    const int64_t hidden = std::max<int64_t>(1, mc / rho);
    w1 = Tensor<T>::zeros({mc, hidden}, true);
    init_uniform_fan_in(w1, mc, rng);
    b1 = Tensor<T>::zeros({hidden}, true);
    w2 = Tensor<T>::zeros({hidden, mc}, true);
    init_uniform_fan_in(w2, hidden, rng);
    b2 = Tensor<T>::zeros({mc}, true);
    w4 = Tensor<T>::zeros({1, rho}, true);
    init_uniform_fan_in(w4, 1, rng);
    b4 = Tensor<T>::zeros({rho}, true);
    w3 = Tensor<T>::zeros({rho, 1}, true);
    init_uniform_fan_in(w3, rho, rng);
    b3 = Tensor<T>::zeros({1}, true);
  }

  FusedFeatures<T> attend(const Tensor<T>& z_all) const {
    auto [w_scale, z1] = scale_attention(z_all, w1, b1, w2, b2);
    auto [w_tokens, z2] = token_attention(z1, w4, b4, w3, b3);
    return {z_all, w_scale, w_tokens, z2};
  }

  Tensor<T> forward(const Tensor<T>& z_all) const {
    return proj.forward(attend(z_all).z_out);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".w1", w1, true});
    out.push_back({prefix + ".b1", b1, true});
    out.push_back({prefix + ".w2", w2, true});
    out.push_back({prefix + ".b2", b2, true});
    out.push_back({prefix + ".w4", w4, true});
    out.push_back({prefix + ".b4", b4, true});
    out.push_back({prefix + ".w3", w3, true});
    out.push_back({prefix + ".b3", b3, true});
    proj.collect(prefix + ".proj", out);
  }
};

// Ablation fusion: concatenate and project, no gating.
template <typename T>
struct BasicScaleFusion {
  Linear<T> proj;  // MC -> C, bias

  BasicScaleFusion() = default;
  BasicScaleFusion(int64_t mc, int64_t out_dim, Rng& rng)
      : proj(mc, out_dim, true, rng) {}

  Tensor<T> forward(const Tensor<T>& z_all) const { return proj.forward(z_all); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    proj.collect(prefix + ".proj", out);
  }
};

}  // namespace tdl
