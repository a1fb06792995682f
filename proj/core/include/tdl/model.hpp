#pragma once

#include <map>
#include <optional>

#include "tdl/sspp.hpp"

// Full segmentation model: encoder -> pyramid -> fusion -> decoder, plus
// parameter enumeration and counting.

namespace tdl {

template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    Rng rng = Rng(cfg.seed).substream("init");
    m.encoder_ = Encoder<T>(cfg, rng);
    const int64_t g = cfg.mid_grid();
    const int64_t dim = cfg.mid_dim();
    const auto windows = cfg.sspp_windows();
    m.sspp_ = Sspp<T>(g, g, dim, cfg.num_heads.back(), windows, cfg.mlp_ratio, rng);
    const int64_t mc = static_cast<int64_t>(windows.size()) * dim;
    if (cfg.fusion == FusionMode::cross_attention)
      m.cross_.emplace(mc, dim, cfg.fusion_reduction, rng);
    else
      m.basic_.emplace(mc, dim, rng);
    m.decoder_ = Decoder<T>(cfg, rng);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const Sspp<T>& sspp() const { return sspp_; }
  const Decoder<T>& decoder() const { return decoder_; }
  const std::optional<CrossContextualAttention<T>>& cross_fusion() const {
    return cross_;
  }

  // img: [B, in_ch, H, W] -> logits [B, K, H, W].
  Tensor<T> forward(const Tensor<T>& img) const {
    if (img.rank() != 4 || img.shape()[1] != cfg_.in_channels ||
        img.shape()[2] != cfg_.img_size || img.shape()[3] != cfg_.img_size)
      throw ShapeError(strcat_msg("forward: expected [B,", cfg_.in_channels, ",",
                                  cfg_.img_size, ",", cfg_.img_size, "], got ",
                                  shape_str(img.shape())));
    Tensor<T> x = permute(img, {0, 2, 3, 1});  // [B, H, W, C_in]
    EncoderOutputs<T> enc = encoder_.forward(x);
    std::vector<Tensor<T>> levels = sspp_.forward(enc.mid);
    Tensor<T> z_all = levels.size() == 1 ? levels[0] : concat<T>(levels, 2);
    Tensor<T> fused = cross_ ? cross_->forward(z_all) : basic_->forward(z_all);
    return decoder_.forward({fused, enc.mid.h, enc.mid.w}, enc.low);
  }

  // All parameters in a fixed construction order; names form a tree.
  ParamList<T> params() const {
    ParamList<T> out;
    encoder_.collect("encoder", out);
    sspp_.collect("sspp", out);
    if (cross_)
      cross_->collect("fusion", out);
    else
      basic_->collect("fusion", out);
    decoder_.collect("decoder", out);
    return out;
  }

  int64_t count_params() const { return param_count(params()); }

  // Scalar-count totals grouped by top-level module (first name segment),
  // in first-appearance order.
  std::vector<std::pair<std::string, int64_t>> breakdown() const {
    std::vector<std::pair<std::string, int64_t>> out;
    for (const auto& p : params()) {
      const std::string top = p.name.substr(0, p.name.find('.'));
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const auto& e) { return e.first == top; });
      if (it == out.end())
        out.emplace_back(top, p.tensor.numel());
      else
        it->second += p.tensor.numel();
    }
    return out;
  }

  // Replaces parameter values from a name -> flat-data map; every model
  // parameter must be present with the exact element count.
  void load_param_data(const std::map<std::string, std::vector<T>>& values) {
    for (auto& p : params_mutable()) {
      auto it = values.find(p.name);
      if (it == values.end())
        throw IoError(strcat_msg("checkpoint: missing parameter '", p.name, "'"));
      if (static_cast<int64_t>(it->second.size()) != p.tensor.numel())
        throw IoError(strcat_msg("checkpoint: parameter '", p.name, "' has ",
                                 it->second.size(), " elements, model expects ",
                                 p.tensor.numel()));
      auto dst = p.tensor.mutable_data();
      std::copy(it->second.begin(), it->second.end(), dst.begin());
    }
  }

  ParamList<T> params_mutable() { return params(); }

 private:
  ModelConfig cfg_;
  Encoder<T> encoder_;
  Sspp<T> sspp_;
  std::optional<CrossContextualAttention<T>> cross_;
  std::optional<BasicScaleFusion<T>> basic_;
  Decoder<T> decoder_;
};

}  // namespace tdl
