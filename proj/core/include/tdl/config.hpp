#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdl/common.hpp"

// Configuration schema. Files are flat `key = value` text with `#` comments;
// serialization is canonical (fixed key order), so parse -> serialize ->
// parse is an identity.

namespace tdl {

enum class FusionMode { cross_attention, basic };
enum class UpsampleMode { patch_expand, bilinear };
enum class Precision { f32, f64 };

std::string to_string(FusionMode m);
std::string to_string(UpsampleMode m);
std::string to_string(Precision p);

// Architectural hyperparameters; the single source of truth for model
// construction.
struct ModelConfig {
  int64_t img_size = 224;
  int64_t in_channels = 3;
  int64_t num_classes = 2;
  int64_t embed_dim = 96;
  std::vector<int64_t> depths = {2, 2, 6};
  std::vector<int64_t> num_heads = {3, 6, 12};
  int64_t window_size = 7;
  int64_t mlp_ratio = 4;
  int64_t sspp_level = 2;
  std::vector<int64_t> sspp_window_sizes;  // empty -> derived from sspp_level
  FusionMode fusion = FusionMode::cross_attention;
  int64_t fusion_reduction = 4;  // squeeze ratio of the fusion MLPs
  int64_t decoder_depth = 2;
  UpsampleMode upsample = UpsampleMode::patch_expand;
  uint64_t seed = 0;

  // Throws ConfigError naming the violated constraint.
  void validate() const;

  int64_t num_stages() const { return static_cast<int64_t>(depths.size()); }
  int64_t patch_grid() const { return img_size / 4; }
  int64_t stage_grid(int64_t i) const { return patch_grid() >> i; }
  int64_t stage_dim(int64_t i) const { return embed_dim << i; }
  int64_t mid_grid() const { return stage_grid(num_stages() - 1); }
  int64_t mid_dim() const { return stage_dim(num_stages() - 1); }
  // Per-side ratio between the low-level (stage-1) and final encoder grids;
  // the decoder's first expand factor.
  int64_t low_to_mid_ratio() const { return int64_t(1) << (num_stages() - 1); }
  // Pyramid branch window sizes: explicit override, or a doubling ladder
  // ([7], [2,7], [2,4,7], [2,4,7,14]) selected by sspp_level.
  std::vector<int64_t> sspp_windows() const;
};

// A full run description: model plus data, optimization and output knobs.
struct RunConfig {
  ModelConfig model;
  std::string dataset_root;
  std::string out_dir = "out";
  int64_t steps = 300;   // when 0, epochs drives the run length
  int64_t epochs = 0;
  int64_t batch_size = 4;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lambda_dice = 0.6;
  double lambda_ce = 0.4;
  double poly_power = 0.9;
  bool augment = true;  // random dihedral flips/rotations during training
  Precision precision = Precision::f32;
  int64_t checkpoint_interval = 100;
  std::string metrics_path = "metrics.csv";
  uint64_t seed = 0;

  std::string to_text() const;  // canonical key order
};

// Ordered key/value view of a config file; parse errors carry line numbers.
class KvConfig {
 public:
  static KvConfig parse_text(const std::string& text);
  static KvConfig parse_file(const std::string& path);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;  // throws ConfigError
  std::string get_or(const std::string& key, const std::string& fallback) const;
  void set(const std::string& key, const std::string& value);

  int64_t get_i64(const std::string& key, int64_t fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  double get_f64(const std::string& key, double fallback) const;
  std::vector<int64_t> get_i64_list(const std::string& key,
                                    std::vector<int64_t> fallback) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

RunConfig parse_run_config(const KvConfig& kv);
RunConfig parse_run_config_file(const std::string& path);
RunConfig parse_run_config_text(const std::string& text);

bool operator==(const ModelConfig& a, const ModelConfig& b);
bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace tdl
