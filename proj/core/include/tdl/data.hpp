#pragma once

#include <string>
#include <vector>

#include "tdl/rng.hpp"
#include "tdl/serialize.hpp"
#include "tdl/tensor.hpp"

// Samples, the synthetic ellipse dataset, dihedral-group augmentation and
// the on-disk dataset layout (`<root>/images/<id>.tdl`,
// `<root>/masks/<id>.tdl`; masks stored as float labels, validated
// integral on load).

namespace tdl {

struct Sample {
  int64_t h = 0, w = 0;
  std::vector<float> image;   // [3, H, W], values in [0,1]
  std::vector<int64_t> mask;  // [H, W], labels in [0, K)
};

// The 8 elements of the dihedral group D4, indexed 0..7: low two bits give
// the number of clockwise quarter turns, bit 2 a prior horizontal flip.
inline constexpr int kD4Elements = 8;

int d4_inverse(int elem);
Sample apply_d4(const Sample& s, int elem);

// Uniformly random D4 element applied identically to image and mask.
Sample augment(const Sample& s, Rng& rng);

// Deterministic per seed: every sample gets K-1 filled random ellipses
// (classes 1..K-1, later classes over earlier on overlap) on background 0;
// the image renders per-class intensities plus Gaussian noise (sigma 0.05),
// clamped to [0,1].
std::vector<Sample> synth_dataset(int64_t n, int64_t h, int64_t w, int64_t k,
                                  uint64_t seed);

void save_dataset(const std::string& root, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& root);

// Highest label value present plus one (lower bound on K).
int64_t dataset_num_classes(const std::vector<Sample>& samples);

template <typename T>
Tensor<T> batch_images(const std::vector<Sample>& samples,
                       const std::vector<int64_t>& idx) {
  const int64_t b = static_cast<int64_t>(idx.size());
  const int64_t h = samples[static_cast<size_t>(idx[0])].h;
  const int64_t w = samples[static_cast<size_t>(idx[0])].w;
  Tensor<T> out = Tensor<T>::zeros({b, 3, h, w});
  T* po = out.mutable_data().data();
  for (int64_t i = 0; i < b; ++i) {
    const Sample& s = samples[static_cast<size_t>(idx[i])];
    if (s.h != h || s.w != w)
      throw DataError(strcat_msg("batch: sample ", idx[i], " is ", s.h, "x", s.w,
                                 ", batch is ", h, "x", w));
    for (size_t j = 0; j < s.image.size(); ++j)
      po[static_cast<size_t>(i) * s.image.size() + j] = static_cast<T>(s.image[j]);
  }
  return out;
}

inline std::vector<int64_t> batch_labels(const std::vector<Sample>& samples,
                                         const std::vector<int64_t>& idx) {
  std::vector<int64_t> out;
  for (int64_t i : idx) {
    const Sample& s = samples[static_cast<size_t>(i)];
    out.insert(out.end(), s.mask.begin(), s.mask.end());
  }
  return out;
}

template <typename T>
Tensor<T> image_tensor(const Sample& s) {
  std::vector<T> d(s.image.size());
  for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(s.image[i]);
  return Tensor<T>({1, 3, s.h, s.w}, std::move(d));
}

}  // namespace tdl
