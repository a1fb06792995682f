#pragma once

#include "tdl/ops.hpp"

// Segmentation objectives over [B, K, H, W] logits and integer label maps.
// Softmax is applied inside the losses; logits stay unnormalized elsewhere.

namespace tdl {

// One-hot encoding of labels as a constant (grad-free) tensor shaped like
// the logits. Throws DataError on out-of-range labels.
template <typename T>
Tensor<T> one_hot_like(const Shape& logits_shape, const std::vector<int64_t>& labels) {
  if (logits_shape.size() != 4)
    throw ShapeError(strcat_msg("one_hot: need [B,K,H,W] logits, got ",
                                shape_str(logits_shape)));
  const int64_t b = logits_shape[0], k = logits_shape[1];
  const int64_t hw = logits_shape[2] * logits_shape[3];
  if (static_cast<int64_t>(labels.size()) != b * hw)
    throw ShapeError(strcat_msg("one_hot: ", labels.size(), " labels for ", b * hw,
                                " pixels"));
  Tensor<T> g = Tensor<T>::zeros(logits_shape);
  T* pg = g.mutable_data().data();
  for (int64_t i = 0; i < b * hw; ++i) {
    const int64_t cls = labels[static_cast<size_t>(i)];
    if (cls < 0 || cls >= k)
      throw DataError(strcat_msg("label ", cls, " outside [0,", k, ") at pixel ", i));
    const int64_t bb = i / hw, px = i % hw;
    pg[(bb * k + cls) * hw + px] = T(1);
  }
  return g;
}

// Soft Dice: softmax over classes, per-class sums pooled over batch and
// pixels, dice_c = (2*sum(p*g) + s) / (sum(p) + sum(g) + s), loss is the
// mean of (1 - dice_c) over all classes.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const std::vector<int64_t>& labels,
                    T smooth = T(1e-5)) {
  Tensor<T> g = one_hot_like<T>(logits.shape(), labels);
  Tensor<T> p = softmax(logits, 1);
  Tensor<T> inter = sum(mul(p, g), {0, 2, 3});  // [K]
  Tensor<T> psum = sum(p, {0, 2, 3});
  Tensor<T> gsum = sum(g, {0, 2, 3});
  Tensor<T> dice = divide(add_scalar(scale(inter, T(2)), smooth),
                          add_scalar(add(psum, gsum), smooth));
  return add_scalar(neg(mean_all(dice)), T(1));
}

// Mean pixelwise cross-entropy from log-softmax.
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const std::vector<int64_t>& labels) {
  Tensor<T> g = one_hot_like<T>(logits.shape(), labels);
  Tensor<T> lp = log_softmax(logits, 1);
  const int64_t pixels = logits.shape()[0] * logits.shape()[2] * logits.shape()[3];
  return scale(sum_all(mul(g, lp)), T(-1) / static_cast<T>(pixels));
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& logits, const std::vector<int64_t>& labels,
                        T lambda_dice, T lambda_ce, T smooth = T(1e-5)) {
  return add(scale(dice_loss(logits, labels, smooth), lambda_dice),
             scale(ce_loss(logits, labels), lambda_ce));
}

}  // namespace tdl
