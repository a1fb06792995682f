#pragma once

#include "tdl/config.hpp"
#include "tdl/swin.hpp"

// Patch embedding, merging (downsample) and expanding (upsample), plus the
// hierarchical encoder and the decoder that fuses deep features with the
// high-resolution skip back to full resolution.

namespace tdl {

// A token grid in flight: [B, H*W, C] plus its spatial extents.
template <typename T>
struct StageOutput {
  Tensor<T> tokens;
  int64_t h = 0, w = 0;
};

template <typename T>
struct EncoderOutputs {
  StageOutput<T> low;  // stage-1 features at img/4 per side
  StageOutput<T> mid;  // final encoder features fed to the pyramid
};

// Non-overlapping 4x4 patches, flattened to 4*4*in_ch raw features, linearly
// projected to the working embed dim and layer-normalized.
template <typename T>
struct PatchEmbed {
  int64_t in_ch = 0, dim = 0;
  Linear<T> proj;  // 16*in_ch -> dim, bias
  LayerNorm<T> norm;

  PatchEmbed() = default;
  PatchEmbed(int64_t in_ch_, int64_t dim_, Rng& rng)
      : in_ch(in_ch_), dim(dim_), proj(16 * in_ch_, dim_, true, rng), norm(dim_) {}

  // img: [B, H, W, in_ch], H and W divisible by 4.
  StageOutput<T> forward(const Tensor<T>& img) const {
    const int64_t b = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
    if (h % 4 != 0 || w % 4 != 0)
      throw ShapeError(strcat_msg("patch_embed: image ", h, "x", w,
                                  " not divisible by patch size 4"));
    Tensor<T> t = reshape(img, {b, h / 4, 4, w / 4, 4, in_ch});
    t = permute(t, {0, 1, 3, 2, 4, 5});  // [B, H/4, W/4, 4, 4, in_ch]
    t = reshape(t, {b, (h / 4) * (w / 4), 16 * in_ch});
    return {norm.forward(proj.forward(t)), h / 4, w / 4};
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    proj.collect(prefix + ".proj", out);
    norm.collect(prefix + ".norm", out);
  }
};

// 2x2 neighboring tokens concatenated row-major to 4C, normalized, projected
// to 2C without bias; token count quartered.
template <typename T>
struct PatchMerging {
  int64_t dim = 0;
  LayerNorm<T> norm;   // over 4C
  Linear<T> reduce;    // 4C -> 2C, no bias

  PatchMerging() = default;
  PatchMerging(int64_t dim_, Rng& rng)
      : dim(dim_), norm(4 * dim_), reduce(4 * dim_, 2 * dim_, false, rng) {}

  StageOutput<T> forward(const StageOutput<T>& x) const {
    if (x.h % 2 != 0 || x.w % 2 != 0)
      throw ShapeError(strcat_msg("patch_merging: odd grid ", x.h, "x", x.w));
    const int64_t b = x.tokens.shape()[0];
    Tensor<T> t = reshape(x.tokens, {b, x.h / 2, 2, x.w / 2, 2, dim});
    t = permute(t, {0, 1, 3, 2, 4, 5});  // [B, H/2, W/2, 2, 2, C]
    t = reshape(t, {b, (x.h / 2) * (x.w / 2), 4 * dim});
    return {reduce.forward(norm.forward(t)), x.h / 2, x.w / 2};
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    norm.collect(prefix + ".norm", out);
    reduce.collect(prefix + ".reduce", out);
  }
};

// Upsample by factor r with channels C -> C/r. The primary route projects
// C -> r^2*(C/r) without bias and rearranges each token into an r x r block;
// the bilinear fallback interpolates the grid and projects the channels.
template <typename T>
struct PatchExpand {
  int64_t factor = 0, c_in = 0, c_out = 0;
  UpsampleMode mode = UpsampleMode::patch_expand;
  Linear<T> proj;  // no bias either way

  PatchExpand() = default;
  PatchExpand(int64_t c_in_, int64_t factor_, UpsampleMode mode_, Rng& rng)
      : factor(factor_), c_in(c_in_), c_out(c_in_ / factor_), mode(mode_) {
    if (c_in % factor != 0)
      throw ConfigError(strcat_msg("patch_expand: channels ", c_in,
                                   " not divisible by factor ", factor));
    const int64_t width = mode == UpsampleMode::patch_expand
                              ? factor * factor * c_out
                              : c_out;
    proj = Linear<T>(c_in, width, false, rng);
  }

  StageOutput<T> forward(const StageOutput<T>& x) const {
    const int64_t b = x.tokens.shape()[0];
    const int64_t oh = x.h * factor, ow = x.w * factor;
    if (mode == UpsampleMode::patch_expand) {
      Tensor<T> t = proj.forward(x.tokens);  // [B, P, r^2*c_out]
      t = reshape(t, {b, x.h, x.w, factor, factor, c_out});
      t = permute(t, {0, 1, 3, 2, 4, 5});    // [B, H, r, W, r, c_out]
      return {reshape(t, {b, oh * ow, c_out}), oh, ow};
    }
    Tensor<T> t = reshape(x.tokens, {b, x.h, x.w, c_in});
    t = bilinear_upsample(t, factor);
    t = proj.forward(t);
    return {reshape(t, {b, oh * ow, c_out}), oh, ow};
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    proj.collect(prefix + ".proj", out);
  }
};

// patch_embed -> stage 1 (low-level tap) -> [merge -> blocks] per remaining
// stage -> mid-level output.
template <typename T>
struct Encoder {
  PatchEmbed<T> embed;
  std::vector<std::vector<SwinBlockPair<T>>> stages;  // pairs per stage
  std::vector<PatchMerging<T>> merges;                // between stages

  Encoder() = default;
  Encoder(const ModelConfig& cfg, Rng& rng) : embed(cfg.in_channels, cfg.embed_dim, rng) {
    const int64_t n = cfg.num_stages();
    for (int64_t i = 0; i < n; ++i) {
      if (i > 0) merges.emplace_back(cfg.stage_dim(i - 1), rng);
      std::vector<SwinBlockPair<T>> pairs;
      const int64_t g = cfg.stage_grid(i);
      for (int64_t p = 0; p < cfg.depths[static_cast<size_t>(i)] / 2; ++p)
        pairs.emplace_back(g, g, cfg.stage_dim(i), cfg.num_heads[static_cast<size_t>(i)],
                           cfg.window_size, cfg.mlp_ratio, rng);
      stages.push_back(std::move(pairs));
    }
  }

  EncoderOutputs<T> forward(const Tensor<T>& img_bhwc) const {
    StageOutput<T> cur = embed.forward(img_bhwc);
    EncoderOutputs<T> out;
    for (size_t i = 0; i < stages.size(); ++i) {
      if (i > 0) cur = merges[i - 1].forward(cur);
      for (const auto& pair : stages[i]) cur.tokens = pair.forward(cur.tokens);
      if (i == 0) out.low = cur;
    }
    out.mid = cur;
    return out;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    embed.collect(prefix + ".embed", out);
    for (size_t i = 0; i < stages.size(); ++i) {
      if (i > 0) merges[i - 1].collect(strcat_msg(prefix, ".merge", i - 1), out);
      for (size_t p = 0; p < stages[i].size(); ++p)
        stages[i][p].collect(strcat_msg(prefix, ".stage", i, ".pair", p), out);
    }
  }
};

// Expand the fused deep features to the low-level grid, concatenate the
// skip, project back to the working width, refine with swin block pairs,
// expand x4 to full resolution and predict K class logits per pixel.
template <typename T>
struct Decoder {
  int64_t dim = 0, num_classes = 0;
  PatchExpand<T> expand_in;   // mid grid -> low grid
  Linear<T> fuse_proj;        // 2C -> C, bias
  std::vector<SwinBlockPair<T>> pairs;
  PatchExpand<T> expand_out;  // low grid -> full resolution, C -> C/4
  Linear<T> head;             // C/4 -> K, bias

  Decoder() = default;
  Decoder(const ModelConfig& cfg, Rng& rng)
      : dim(cfg.embed_dim),
        num_classes(cfg.num_classes),
        expand_in(cfg.mid_dim(), cfg.low_to_mid_ratio(), cfg.upsample, rng),
        fuse_proj(2 * cfg.embed_dim, cfg.embed_dim, true, rng),
        expand_out(cfg.embed_dim, 4, cfg.upsample, rng),
        head(cfg.embed_dim / 4, cfg.num_classes, true, rng) {
    const int64_t g = cfg.stage_grid(0);
    for (int64_t p = 0; p < cfg.decoder_depth / 2; ++p)
      pairs.emplace_back(g, g, cfg.embed_dim, cfg.num_heads[0], cfg.window_size,
                         cfg.mlp_ratio, rng);
  }

  // Returns [B, K, Himg, Wimg] logits.
  Tensor<T> forward(const StageOutput<T>& fused, const StageOutput<T>& low) const {
    StageOutput<T> up = expand_in.forward(fused);
    if (up.h != low.h || up.w != low.w)
      throw ShapeError(strcat_msg("decoder: expanded grid ", up.h, "x", up.w,
                                  " does not match low-level grid ", low.h, "x", low.w));
    Tensor<T> t = concat<T>({up.tokens, low.tokens}, 2);
    t = fuse_proj.forward(t);
    for (const auto& pair : pairs) t = pair.forward(t);
    StageOutput<T> full = expand_out.forward({t, low.h, low.w});
    Tensor<T> logits = head.forward(full.tokens);  // [B, H*W, K]
    const int64_t b = logits.shape()[0];
    logits = reshape(logits, {b, full.h, full.w, num_classes});
    return permute(logits, {0, 3, 1, 2});
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    expand_in.collect(prefix + ".expand_in", out);
    fuse_proj.collect(prefix + ".fuse_proj", out);
    for (size_t p = 0; p < pairs.size(); ++p)
      pairs[p].collect(strcat_msg(prefix, ".pair", p), out);
    expand_out.collect(prefix + ".expand_out", out);
    head.collect(prefix + ".head", out);
  }
};

}  // namespace tdl
