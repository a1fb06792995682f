#include "tdl/config.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tdl {

std::string to_string(FusionMode m) {
  return m == FusionMode::cross_attention ? "cross_attention" : "basic";
}

std::string to_string(UpsampleMode m) {
  return m == UpsampleMode::patch_expand ? "patch_expand" : "bilinear";
}

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

void ModelConfig::validate() const {
  if (img_size < 8 || img_size % 4 != 0)
    throw ConfigError(strcat_msg("config: img_size ", img_size,
                                 " must be a positive multiple of 4"));
  if (in_channels < 1)
    throw ConfigError("config: in_channels must be >= 1");
  if (num_classes < 2)
    throw ConfigError(strcat_msg("config: num_classes ", num_classes, " must be >= 2"));
  if (embed_dim < 1) throw ConfigError("config: embed_dim must be >= 1");
  if (depths.empty()) throw ConfigError("config: depths must be non-empty");
  if (depths.size() != num_heads.size())
    throw ConfigError(strcat_msg("config: depths has ", depths.size(),
                                 " stages but num_heads has ", num_heads.size()));
  for (size_t i = 0; i < depths.size(); ++i) {
    if (depths[i] < 2 || depths[i] % 2 != 0)
      throw ConfigError(strcat_msg("config: depths[", i, "] = ", depths[i],
                                   " must be even and >= 2 (block pairs)"));
    if (num_heads[i] < 1)
      throw ConfigError(strcat_msg("config: num_heads[", i, "] must be >= 1"));
    if (stage_dim(static_cast<int64_t>(i)) % num_heads[i] != 0)
      throw ConfigError(strcat_msg("config: stage ", i, " dim ",
                                   stage_dim(static_cast<int64_t>(i)),
                                   " not divisible by num_heads ", num_heads[i]));
  }
  const int64_t stages = num_stages();
  if (stages > 3)
    throw ConfigError(strcat_msg("config: ", stages,
                                 " stages unsupported; the decoder's first expand "
                                 "factor must be 2 or 4 (2 or 3 stages)"));
  if (img_size % (4 << (stages - 1)) != 0)
    throw ConfigError(strcat_msg("config: img_size ", img_size,
                                 " not divisible by ", 4 << (stages - 1),
                                 " (4 * 2^(stages-1))"));
  if (window_size < 1) throw ConfigError("config: window_size must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("config: mlp_ratio must be >= 1");
  if (sspp_level < 1 || sspp_level > 4)
    throw ConfigError(strcat_msg("config: sspp_level ", sspp_level,
                                 " outside {1,2,3,4}"));
  if (!sspp_window_sizes.empty() &&
      static_cast<int64_t>(sspp_window_sizes.size()) != sspp_level)
    throw ConfigError(strcat_msg("config: sspp_window_sizes has ",
                                 sspp_window_sizes.size(), " entries for sspp_level ",
                                 sspp_level));
  if (fusion_reduction < 1) throw ConfigError("config: fusion_reduction must be >= 1");
  if (decoder_depth < 2 || decoder_depth % 2 != 0)
    throw ConfigError(strcat_msg("config: decoder_depth ", decoder_depth,
                                 " must be even and >= 2 (block pairs)"));
  // The final head expand splits channels by 4; the decoder working width is
  // embed_dim.
  if (embed_dim % 4 != 0)
    throw ConfigError(strcat_msg("config: embed_dim ", embed_dim,
                                 " must be divisible by 4 (head expand)"));
  // Every stage dim must split across its heads after the ratio clamp; checked
  // above. Mid-level dim must divide by the decoder's first expand factor.
  if (mid_dim() % low_to_mid_ratio() != 0)
    throw ConfigError("config: mid-level dim not divisible by expand factor");
}

std::vector<int64_t> ModelConfig::sspp_windows() const {
  if (!sspp_window_sizes.empty()) return sspp_window_sizes;
  static const std::vector<std::vector<int64_t>> ladder = {
      {7}, {2, 7}, {2, 4, 7}, {2, 4, 7, 14}};
  return ladder[static_cast<size_t>(sspp_level - 1)];
}

namespace {

std::string i64_list_str(const std::vector<int64_t>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

std::string f64_str(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "# model\n";
  os << "img_size = " << model.img_size << "\n";
  os << "in_channels = " << model.in_channels << "\n";
  os << "num_classes = " << model.num_classes << "\n";
  os << "embed_dim = " << model.embed_dim << "\n";
  os << "depths = " << i64_list_str(model.depths) << "\n";
  os << "num_heads = " << i64_list_str(model.num_heads) << "\n";
  os << "window_size = " << model.window_size << "\n";
  os << "mlp_ratio = " << model.mlp_ratio << "\n";
  os << "sspp_level = " << model.sspp_level << "\n";
  if (!model.sspp_window_sizes.empty())
    os << "sspp_window_sizes = " << i64_list_str(model.sspp_window_sizes) << "\n";
  os << "fusion = " << to_string(model.fusion) << "\n";
  os << "fusion_reduction = " << model.fusion_reduction << "\n";
  os << "decoder_depth = " << model.decoder_depth << "\n";
  os << "upsample = " << to_string(model.upsample) << "\n";
  os << "# run\n";
  os << "dataset_root = " << dataset_root << "\n";
  os << "out_dir = " << out_dir << "\n";
  os << "steps = " << steps << "\n";
  os << "epochs = " << epochs << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "base_lr = " << f64_str(base_lr) << "\n";
  os << "momentum = " << f64_str(momentum) << "\n";
  os << "weight_decay = " << f64_str(weight_decay) << "\n";
  os << "lambda_dice = " << f64_str(lambda_dice) << "\n";
  os << "lambda_ce = " << f64_str(lambda_ce) << "\n";
  os << "poly_power = " << f64_str(poly_power) << "\n";
  os << "augment = " << (augment ? 1 : 0) << "\n";
  os << "precision = " << to_string(precision) << "\n";
  os << "checkpoint_interval = " << checkpoint_interval << "\n";
  os << "metrics_path = " << metrics_path << "\n";
  os << "seed = " << seed << "\n";
  return os.str();
}

KvConfig KvConfig::parse_text(const std::string& text) {
  KvConfig kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(strcat_msg("config line ", lineno, ": expected 'key = value', got '",
                                   t, "'"));
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError(strcat_msg("config line ", lineno, ": empty key"));
    kv.set(key, value);
  }
  return kv;
}

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(strcat_msg("config: cannot open '", path, "'"));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

bool KvConfig::has(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return true;
  return false;
}

const std::string& KvConfig::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw ConfigError(strcat_msg("config: missing key '", key, "'"));
}

std::string KvConfig::get_or(const std::string& key, const std::string& fallback) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return fallback;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

namespace {

int64_t parse_i64(const std::string& key, const std::string& s) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError(strcat_msg("config: key '", key, "': '", s, "' is not an integer"));
  return static_cast<int64_t>(v);
}

uint64_t parse_u64(const std::string& key, const std::string& s) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError(strcat_msg("config: key '", key, "': '", s,
                                 "' is not a non-negative integer"));
  return static_cast<uint64_t>(v);
}

double parse_f64(const std::string& key, const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError(strcat_msg("config: key '", key, "': '", s, "' is not a number"));
  return v;
}

}  // namespace

int64_t KvConfig::get_i64(const std::string& key, int64_t fallback) const {
  return has(key) ? parse_i64(key, get(key)) : fallback;
}

uint64_t KvConfig::get_u64(const std::string& key, uint64_t fallback) const {
  return has(key) ? parse_u64(key, get(key)) : fallback;
}

double KvConfig::get_f64(const std::string& key, double fallback) const {
  return has(key) ? parse_f64(key, get(key)) : fallback;
}

std::vector<int64_t> KvConfig::get_i64_list(const std::string& key,
                                            std::vector<int64_t> fallback) const {
  if (!has(key)) return fallback;
  const std::string& s = get(key);
  std::vector<int64_t> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const std::string t = trim(item);
    if (t.empty())
      throw ConfigError(strcat_msg("config: key '", key, "': empty list entry in '", s, "'"));
    out.push_back(parse_i64(key, t));
  }
  if (out.empty())
    throw ConfigError(strcat_msg("config: key '", key, "': empty list"));
  return out;
}

RunConfig parse_run_config(const KvConfig& kv) {
  RunConfig rc;
  ModelConfig& m = rc.model;
  m.img_size = kv.get_i64("img_size", m.img_size);
  m.in_channels = kv.get_i64("in_channels", m.in_channels);
  m.num_classes = kv.get_i64("num_classes", m.num_classes);
  m.embed_dim = kv.get_i64("embed_dim", m.embed_dim);
  m.depths = kv.get_i64_list("depths", m.depths);
  m.num_heads = kv.get_i64_list("num_heads", m.num_heads);
  m.window_size = kv.get_i64("window_size", m.window_size);
  m.mlp_ratio = kv.get_i64("mlp_ratio", m.mlp_ratio);
  m.sspp_level = kv.get_i64("sspp_level", m.sspp_level);
  m.sspp_window_sizes = kv.get_i64_list("sspp_window_sizes", m.sspp_window_sizes);
  if (kv.has("fusion")) {
    const std::string& f = kv.get("fusion");
    if (f == "cross_attention")
      m.fusion = FusionMode::cross_attention;
    else if (f == "basic")
      m.fusion = FusionMode::basic;
    else
      throw ConfigError(strcat_msg("config: fusion '", f,
                                   "' not in {cross_attention, basic}"));
  }
  m.fusion_reduction = kv.get_i64("fusion_reduction", m.fusion_reduction);
  m.decoder_depth = kv.get_i64("decoder_depth", m.decoder_depth);
  if (kv.has("upsample")) {
    const std::string& u = kv.get("upsample");
    if (u == "patch_expand")
      m.upsample = UpsampleMode::patch_expand;
    else if (u == "bilinear")
      m.upsample = UpsampleMode::bilinear;
    else
      throw ConfigError(strcat_msg("config: upsample '", u,
                                   "' not in {patch_expand, bilinear}"));
  }

  rc.dataset_root = kv.get_or("dataset_root", rc.dataset_root);
  rc.out_dir = kv.get_or("out_dir", rc.out_dir);
  rc.steps = kv.get_i64("steps", rc.steps);
  rc.epochs = kv.get_i64("epochs", rc.epochs);
  rc.batch_size = kv.get_i64("batch_size", rc.batch_size);
  rc.base_lr = kv.get_f64("base_lr", rc.base_lr);
  rc.momentum = kv.get_f64("momentum", rc.momentum);
  rc.weight_decay = kv.get_f64("weight_decay", rc.weight_decay);
  rc.lambda_dice = kv.get_f64("lambda_dice", rc.lambda_dice);
  rc.lambda_ce = kv.get_f64("lambda_ce", rc.lambda_ce);
  rc.poly_power = kv.get_f64("poly_power", rc.poly_power);
  rc.augment = kv.get_i64("augment", rc.augment ? 1 : 0) != 0;
  if (kv.has("precision")) {
    const std::string& p = kv.get("precision");
    if (p == "f32")
      rc.precision = Precision::f32;
    else if (p == "f64")
      rc.precision = Precision::f64;
    else
      throw ConfigError(strcat_msg("config: precision '", p, "' not in {f32, f64}"));
  }
  rc.checkpoint_interval = kv.get_i64("checkpoint_interval", rc.checkpoint_interval);
  rc.metrics_path = kv.get_or("metrics_path", rc.metrics_path);
  rc.seed = kv.get_u64("seed", rc.seed);
  rc.model.seed = rc.seed;
  if (rc.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (rc.steps < 0 || rc.epochs < 0)
    throw ConfigError("config: steps/epochs must be non-negative");
  return rc;
}

RunConfig parse_run_config_file(const std::string& path) {
  return parse_run_config(KvConfig::parse_file(path));
}

RunConfig parse_run_config_text(const std::string& text) {
  return parse_run_config(KvConfig::parse_text(text));
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.img_size == b.img_size && a.in_channels == b.in_channels &&
         a.num_classes == b.num_classes && a.embed_dim == b.embed_dim &&
         a.depths == b.depths && a.num_heads == b.num_heads &&
         a.window_size == b.window_size && a.mlp_ratio == b.mlp_ratio &&
         a.sspp_level == b.sspp_level && a.sspp_window_sizes == b.sspp_window_sizes &&
         a.fusion == b.fusion && a.fusion_reduction == b.fusion_reduction &&
         a.decoder_depth == b.decoder_depth && a.upsample == b.upsample &&
         a.seed == b.seed;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.model == b.model && a.dataset_root == b.dataset_root &&
         a.out_dir == b.out_dir && a.steps == b.steps && a.epochs == b.epochs &&
         a.batch_size == b.batch_size && a.base_lr == b.base_lr &&
         a.momentum == b.momentum && a.weight_decay == b.weight_decay &&
         a.lambda_dice == b.lambda_dice && a.lambda_ce == b.lambda_ce &&
         a.poly_power == b.poly_power && a.augment == b.augment &&
         a.precision == b.precision &&
         a.checkpoint_interval == b.checkpoint_interval &&
         a.metrics_path == b.metrics_path && a.seed == b.seed;
}

}  // namespace tdl
