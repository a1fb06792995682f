#include "tdl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace tdl {

namespace {

namespace fs = std::filesystem;

// Quarter-turn clockwise on a square grid: out[r][c] = in[n-1-c][r].
template <typename V>
std::vector<V> rotate_cw(const std::vector<V>& in, int64_t n) {
  std::vector<V> out(in.size());
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < n; ++c)
      out[static_cast<size_t>(r * n + c)] = in[static_cast<size_t>((n - 1 - c) * n + r)];
  return out;
}

template <typename V>
std::vector<V> flip_h(const std::vector<V>& in, int64_t n) {
  std::vector<V> out(in.size());
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < n; ++c)
      out[static_cast<size_t>(r * n + c)] = in[static_cast<size_t>(r * n + (n - 1 - c))];
  return out;
}

template <typename V>
std::vector<V> apply_d4_plane(std::vector<V> plane, int64_t n, int elem) {
  if (elem & 4) plane = flip_h(plane, n);
  for (int t = 0; t < (elem & 3); ++t) plane = rotate_cw(plane, n);
  return plane;
}

// Deterministic per-(class, channel) base intensity: classes sit evenly on a
// color wheel with 120-degree channel phases, so any two classes differ
// strongly in at least one channel (well above the noise floor).
float class_intensity(int64_t cls, int64_t ch, int64_t k) {
  constexpr double kTwoPi = 6.283185307179586;
  const double phase = kTwoPi * static_cast<double>(cls) / static_cast<double>(k) +
                       kTwoPi * static_cast<double>(ch) / 3.0;
  return static_cast<float>(0.5 + 0.35 * std::cos(phase));
}

std::string sample_id(int64_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06lld", static_cast<long long>(i));
  return buf;
}

}  // namespace

int d4_inverse(int elem) {
  if (elem & 4) return elem;  // flip-then-rotate elements are involutions
  return (4 - (elem & 3)) & 3;
}

Sample apply_d4(const Sample& s, int elem) {
  if (s.h != s.w)
    throw DataError(strcat_msg("augment: sample ", s.h, "x", s.w, " is not square"));
  if (elem < 0 || elem >= kD4Elements)
    throw DataError(strcat_msg("augment: element ", elem, " outside [0,8)"));
  Sample out;
  out.h = s.h;
  out.w = s.w;
  const size_t plane = static_cast<size_t>(s.h * s.w);
  out.image.reserve(s.image.size());
  for (int ch = 0; ch < 3; ++ch) {
    std::vector<float> p(s.image.begin() + static_cast<int64_t>(ch * plane),
                         s.image.begin() + static_cast<int64_t>((ch + 1) * plane));
    p = apply_d4_plane(std::move(p), s.h, elem);
    out.image.insert(out.image.end(), p.begin(), p.end());
  }
  out.mask = apply_d4_plane(s.mask, s.h, elem);
  return out;
}

Sample augment(const Sample& s, Rng& rng) {
  return apply_d4(s, static_cast<int>(rng.next_below(kD4Elements)));
}

std::vector<Sample> synth_dataset(int64_t n, int64_t h, int64_t w, int64_t k,
                                  uint64_t seed) {
  if (h < 4 || w < 4) throw DataError(strcat_msg("synth: degenerate extents ", h, "x", w));
  if (k < 2) throw DataError(strcat_msg("synth: need K >= 2 classes, got ", k));
  const Rng base = Rng(seed).substream("synth");
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    Rng rng = base.substream(static_cast<uint64_t>(i));
    Sample s;
    s.h = h;
    s.w = w;
    s.mask.assign(static_cast<size_t>(h * w), 0);
    for (int64_t cls = 1; cls < k; ++cls) {
      const double cy = rng.uniform(0.3, 0.7) * static_cast<double>(h);
      const double cx = rng.uniform(0.3, 0.7) * static_cast<double>(w);
      const double ay = rng.uniform(static_cast<double>(h) / 6.0,
                                    static_cast<double>(h) / 3.0);
      const double ax = rng.uniform(static_cast<double>(w) / 6.0,
                                    static_cast<double>(w) / 3.0);
      const double theta = rng.uniform(0.0, 3.14159265358979323846);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy;
          const double dx = static_cast<double>(x) + 0.5 - cx;
          const double u = (dx * ct + dy * st) / ax;
          const double v = (-dx * st + dy * ct) / ay;
          if (u * u + v * v <= 1.0) s.mask[static_cast<size_t>(y * w + x)] = cls;
        }
    }
    s.image.resize(static_cast<size_t>(3 * h * w));
    for (int64_t ch = 0; ch < 3; ++ch)
      for (int64_t p = 0; p < h * w; ++p) {
        const int64_t cls = s.mask[static_cast<size_t>(p)];
        const double v = class_intensity(cls, ch, k) + 0.05 * rng.next_normal();
        s.image[static_cast<size_t>(ch * h * w + p)] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const std::string& root, const std::vector<Sample>& samples) {
  const fs::path images = fs::path(root) / "images";
  const fs::path masks = fs::path(root) / "masks";
  std::error_code ec;
  fs::create_directories(images, ec);
  fs::create_directories(masks, ec);
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw IoError(strcat_msg("cannot create dataset directories under '", root, "'"));
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::string id = sample_id(static_cast<int64_t>(i));
    save_tdl1_file((images / (id + ".tdl")).string(), {3, s.h, s.w}, s.image.data());
    std::vector<float> m(s.mask.size());
    for (size_t j = 0; j < m.size(); ++j) m[j] = static_cast<float>(s.mask[j]);
    save_tdl1_file((masks / (id + ".tdl")).string(), {s.h, s.w}, m.data());
  }
}

std::vector<Sample> load_dataset(const std::string& root) {
  const fs::path images = fs::path(root) / "images";
  const fs::path masks = fs::path(root) / "masks";
  if (!fs::is_directory(images))
    throw DataError(strcat_msg("dataset: missing images directory '", images.string(),
                               "'"));
  if (!fs::is_directory(masks))
    throw DataError(strcat_msg("dataset: missing masks directory '", masks.string(),
                               "'"));
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images))
    if (entry.path().extension() == ".tdl") ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty())
    throw DataError(strcat_msg("dataset: no .tdl images under '", images.string(), "'"));

  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    const std::string img_path = (images / (id + ".tdl")).string();
    const std::string mask_path = (masks / (id + ".tdl")).string();
    if (!fs::exists(mask_path))
      throw DataError(strcat_msg("dataset: missing mask '", mask_path, "'"));
    Tdl1Data img = load_tdl1_file(img_path);
    Tdl1Data msk = load_tdl1_file(mask_path);
    if (img.shape.size() != 3 || img.shape[0] != 3)
      throw DataError(strcat_msg("dataset: image '", img_path, "' has shape ",
                                 shape_str(img.shape), ", expected [3,H,W]"));
    if (msk.shape.size() != 2 || msk.shape[0] != img.shape[1] ||
        msk.shape[1] != img.shape[2])
      throw DataError(strcat_msg("dataset: mask '", mask_path, "' has shape ",
                                 shape_str(msk.shape), ", image is ",
                                 shape_str(img.shape)));
    Sample s;
    s.h = img.shape[1];
    s.w = img.shape[2];
    s.image = std::move(img.data);
    s.mask.resize(msk.data.size());
    for (size_t j = 0; j < msk.data.size(); ++j) {
      const float v = msk.data[j];
      if (v < 0.0f || v != std::floor(v))
        throw DataError(strcat_msg("dataset: mask '", mask_path,
                                   "' has non-integral label ", v, " at pixel ", j));
      s.mask[j] = static_cast<int64_t>(v);
    }
    out.push_back(std::move(s));
  }
  return out;
}

int64_t dataset_num_classes(const std::vector<Sample>& samples) {
  int64_t top = 0;
  for (const auto& s : samples)
    for (int64_t v : s.mask) top = std::max(top, v);
  return top + 1;
}

}  // namespace tdl
