#include <map>
#include <vector>

#include <gtest/gtest.h>

#include "tdl/model.hpp"
#include "test_util.hpp"

namespace tdl {
namespace {

using testutil::expect_bit_equal;
using testutil::random_tensor;

ModelConfig tiny_config() {
  ModelConfig m;
  m.img_size = 32;
  m.in_channels = 3;
  m.num_classes = 2;
  m.embed_dim = 8;
  m.depths = {2, 2};
  m.num_heads = {2, 2};
  m.window_size = 4;
  m.mlp_ratio = 4;
  m.sspp_level = 2;
  m.decoder_depth = 2;
  return m;
}

// ---------------------------------------------------------------------------
// Closed-form parameter audit
// ---------------------------------------------------------------------------

// Independent scalar-count formulas, written from the layer definitions:
//   linear in->out (+bias)      : in*out (+ out)
//   layernorm over c            : 2c
//   attention at dim D, heads h : qkv D*3D+3D, proj D*D+D, table (2M-1)^2 * h
//   mlp at ratio r              : D*rD+rD + rD*D+D
// A transformer block is two layernorms + attention + mlp; a pair is two
// blocks with the same geometry.
int64_t audit_block(int64_t d, int64_t heads, int64_t m, int64_t r) {
  const int64_t norms = 4 * d;
  const int64_t attn =
      (d * 3 * d + 3 * d) + (d * d + d) + (2 * m - 1) * (2 * m - 1) * heads;
  const int64_t mlp = (d * r * d + r * d) + (r * d * d + d);
  return norms + attn + mlp;
}

int64_t audit_pair(int64_t d, int64_t heads, int64_t m, int64_t r) {
  return 2 * audit_block(d, heads, m, r);
}

struct Audit {
  int64_t encoder = 0, sspp = 0, fusion = 0, decoder = 0;
  int64_t total() const { return encoder + sspp + fusion + decoder; }
};

Audit audit_model(const ModelConfig& cfg) {
  Audit a;
  const int64_t c = cfg.embed_dim, r = cfg.mlp_ratio;

  // Encoder: patch embed, then per stage (merge +) depth/2 block pairs.
  a.encoder = (16 * cfg.in_channels * c + c) + 2 * c;  // embed proj + norm
  for (int64_t i = 0; i < cfg.num_stages(); ++i) {
    const int64_t d = cfg.stage_dim(i);
    const int64_t g = cfg.stage_grid(i);
    if (i > 0) {
      const int64_t prev = cfg.stage_dim(i - 1);
      a.encoder += 2 * (4 * prev) + (4 * prev) * (2 * prev);  // merge norm + reduce
    }
    const int64_t m = clamp_window(cfg.window_size, g, g);
    a.encoder += (cfg.depths[static_cast<size_t>(i)] / 2) *
                 audit_pair(d, cfg.num_heads[static_cast<size_t>(i)], m, r);
  }

  // Pyramid: one pair per ladder window, all at the final grid and width.
  const int64_t gd = cfg.mid_dim();
  const int64_t gg = cfg.mid_grid();
  const auto windows = cfg.sspp_windows();
  for (int64_t w : windows)
    a.sspp += audit_pair(gd, cfg.num_heads.back(), clamp_window(w, gg, gg), r);

  // Fusion: gate MLPs (cross mode only) + shared projection back to C_mid.
  const int64_t mc = static_cast<int64_t>(windows.size()) * gd;
  if (cfg.fusion == FusionMode::cross_attention) {
    const int64_t hidden = std::max<int64_t>(1, mc / cfg.fusion_reduction);
    a.fusion += mc * hidden + hidden + hidden * mc + mc;  // channel path
    a.fusion += 3 * cfg.fusion_reduction + 1;             // token path: 1->rho->1
  }
  a.fusion += mc * gd + gd;  // projection

  // Decoder: expand to the skip grid, fuse, refine, expand x4, classify.
  const int64_t ratio = cfg.low_to_mid_ratio();
  a.decoder += gd * (ratio * ratio * (gd / ratio));  // expand_in, no bias
  a.decoder += 2 * c * c + c;                        // fuse_proj 2C -> C
  const int64_t g0 = cfg.stage_grid(0);
  a.decoder += (cfg.decoder_depth / 2) *
               audit_pair(c, cfg.num_heads[0], clamp_window(cfg.window_size, g0, g0), r);
  a.decoder += c * (16 * (c / 4));                   // expand_out x4, no bias
  a.decoder += (c / 4) * cfg.num_classes + cfg.num_classes;  // head
  return a;
}

TEST(ParamCount, TinyConfigMatchesHandAuditExactly) {
  ModelConfig cfg = tiny_config();
  Model<float> model = Model<float>::build(cfg);
  const Audit a = audit_model(cfg);
  // Frozen absolute values so a silent architecture change cannot slip by.
  EXPECT_EQ(a.encoder, 9680);
  EXPECT_EQ(a.sspp, 13352);
  EXPECT_EQ(a.fusion, 1093);
  EXPECT_EQ(a.decoder, 2850);
  EXPECT_EQ(a.total(), 26975);
  EXPECT_EQ(model.count_params(), a.total());

  const auto breakdown = model.breakdown();
  ASSERT_EQ(breakdown.size(), 4u);
  EXPECT_EQ(breakdown[0], (std::pair<std::string, int64_t>{"encoder", a.encoder}));
  EXPECT_EQ(breakdown[1], (std::pair<std::string, int64_t>{"sspp", a.sspp}));
  EXPECT_EQ(breakdown[2], (std::pair<std::string, int64_t>{"fusion", a.fusion}));
  EXPECT_EQ(breakdown[3], (std::pair<std::string, int64_t>{"decoder", a.decoder}));
}

TEST(ParamCount, DefaultConfigSizeFrozenAndInBand) {
  ModelConfig cfg;  // 224px, C = 96, depths {2,2,6}, heads {3,6,12}
  Model<float> model = Model<float>::build(cfg);
  const int64_t n = model.count_params();
  EXPECT_EQ(n, audit_model(cfg).total());
  // Frozen exact size, and the published ~21.14M figure within +-15%.
  EXPECT_EQ(n, 20714511);
  EXPECT_GT(n, static_cast<int64_t>(21140000 * 0.85));
  EXPECT_LT(n, static_cast<int64_t>(21140000 * 1.15));
}

TEST(ParamCount, OnlyPyramidAndFusionVaryWithLevel) {
  std::vector<std::vector<std::pair<std::string, int64_t>>> tables;
  for (int64_t level = 1; level <= 4; ++level) {
    ModelConfig cfg = tiny_config();
    cfg.sspp_level = level;
    tables.push_back(Model<float>::build(cfg).breakdown());
  }
  for (size_t i = 1; i < tables.size(); ++i) {
    ASSERT_EQ(tables[i].size(), 4u);
    EXPECT_EQ(tables[i][0], tables[0][0]) << "encoder at level " << i + 1;
    EXPECT_EQ(tables[i][3], tables[0][3]) << "decoder at level " << i + 1;
    EXPECT_GT(tables[i][1].second, tables[i - 1][1].second) << "pyramid grows";
    EXPECT_GT(tables[i][2].second, tables[i - 1][2].second) << "fusion grows";
  }
}

TEST(ParamCount, FusionModeOnlyChangesFusionSubtree) {
  ModelConfig cross = tiny_config();
  ModelConfig basic = tiny_config();
  basic.fusion = FusionMode::basic;
  auto bc = Model<float>::build(cross).breakdown();
  auto bb = Model<float>::build(basic).breakdown();
  ASSERT_EQ(bc.size(), 4u);
  ASSERT_EQ(bb.size(), 4u);
  EXPECT_EQ(bc[0], bb[0]);
  EXPECT_EQ(bc[3], bb[3]);
  EXPECT_EQ(bc[1].second, bb[1].second);      // pyramid untouched
  EXPECT_LT(bb[2].second, bc[2].second);      // ablation drops the gate MLPs
  EXPECT_EQ(bc[2].second - bb[2].second, 565);  // the gate MLPs for MC = 32
}

// ---------------------------------------------------------------------------
// Forward shapes across the configuration grid
// ---------------------------------------------------------------------------

TEST(ModelForward, AllLevelsAndFusionModes) {
  Rng rng(601);
  Tensor<float> img = random_tensor<float>({1, 3, 32, 32}, rng);
  for (int64_t level = 1; level <= 4; ++level)
    for (FusionMode fusion : {FusionMode::cross_attention, FusionMode::basic}) {
      ModelConfig cfg = tiny_config();
      cfg.sspp_level = level;
      cfg.fusion = fusion;
      Model<float> model = Model<float>::build(cfg);
      Tensor<float> logits = model.forward(img);
      EXPECT_EQ(logits.shape(), (Shape{1, 2, 32, 32}))
          << "level " << level << " fusion " << to_string(fusion);
      for (float v : logits.data()) ASSERT_TRUE(std::isfinite(v));
    }
}

TEST(ModelForward, RejectsWrongInputShape) {
  Model<float> model = Model<float>::build(tiny_config());
  Rng rng(602);
  EXPECT_THROW(model.forward(random_tensor<float>({1, 3, 16, 16}, rng)), ShapeError);
  EXPECT_THROW(model.forward(random_tensor<float>({1, 1, 32, 32}, rng)), ShapeError);
  EXPECT_THROW(model.forward(random_tensor<float>({3, 32, 32}, rng)), ShapeError);
}

TEST(ModelForward, RepeatIsBitIdentical) {
  Rng rng(603);
  Model<double> model = Model<double>::build(tiny_config());
  Tensor<double> img = random_tensor<double>({1, 3, 32, 32}, rng);
  expect_bit_equal(model.forward(img), model.forward(img));
}

TEST(ModelForward, SameSeedSameModel) {
  Rng rng(604);
  Tensor<double> img = random_tensor<double>({1, 3, 32, 32}, rng);
  ModelConfig cfg = tiny_config();
  cfg.seed = 17;
  Model<double> a = Model<double>::build(cfg);
  Model<double> b = Model<double>::build(cfg);
  expect_bit_equal(a.forward(img), b.forward(img));

  cfg.seed = 18;
  Model<double> c = Model<double>::build(cfg);
  bool same = true;
  const Tensor<double> ya = a.forward(img), yc = c.forward(img);
  for (size_t i = 0; i < ya.data().size(); ++i)
    if (ya.data()[i] != yc.data()[i]) same = false;
  EXPECT_FALSE(same) << "different seeds must give different weights";
}

TEST(ModelForward, BatchMatchesPerSampleRuns) {
  Rng rng(605);
  Model<double> model = Model<double>::build(tiny_config());
  Tensor<double> batch = random_tensor<double>({2, 3, 32, 32}, rng);
  Tensor<double> out = model.forward(batch);

  for (int64_t b = 0; b < 2; ++b) {
    Tensor<double> single = narrow(batch, 0, b, 1).clone_detached();
    Tensor<double> y = model.forward(single);
    for (int64_t i = 0; i < y.numel(); ++i)
      ASSERT_NEAR(y.data()[static_cast<size_t>(i)],
                  out.data()[static_cast<size_t>(b * y.numel() + i)], 1e-6)
          << "sample " << b;
  }
}

// ---------------------------------------------------------------------------
// Parameter plumbing
// ---------------------------------------------------------------------------

TEST(ModelParams, NamesAreUniqueAndGrouped) {
  Model<float> model = Model<float>::build(tiny_config());
  std::map<std::string, int64_t> seen;
  for (const auto& p : model.params()) {
    EXPECT_EQ(seen.count(p.name), 0u) << "duplicate " << p.name;
    seen[p.name] = p.tensor.numel();
    const std::string top = p.name.substr(0, p.name.find('.'));
    EXPECT_TRUE(top == "encoder" || top == "sspp" || top == "fusion" ||
                top == "decoder")
        << p.name;
  }
}

TEST(ModelParams, LoadParamDataRoundtripAndValidation) {
  Model<double> model = Model<double>::build(tiny_config());
  Rng rng(606);
  std::map<std::string, std::vector<double>> values;
  for (const auto& p : model.params()) {
    std::vector<double> v(static_cast<size_t>(p.tensor.numel()));
    for (double& x : v) x = rng.uniform(-0.1, 0.1);
    values[p.name] = v;
  }
  model.load_param_data(values);
  for (const auto& p : model.params()) {
    const auto& want = values[p.name];
    for (size_t i = 0; i < want.size(); ++i)
      ASSERT_EQ(p.tensor.data()[i], want[i]) << p.name;
  }

  auto missing = values;
  missing.erase(missing.begin()->first);
  EXPECT_THROW(model.load_param_data(missing), IoError);

  auto wrong = values;
  wrong.begin()->second.push_back(0.0);
  EXPECT_THROW(model.load_param_data(wrong), IoError);
}

}  // namespace
}  // namespace tdl
