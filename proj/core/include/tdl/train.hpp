#pragma once

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "tdl/data.hpp"
#include "tdl/loss.hpp"
#include "tdl/metrics.hpp"
#include "tdl/model.hpp"
#include "tdl/optim.hpp"
#include "tdl/serialize.hpp"

// Training loop and evaluation driver. One Trainer owns the model, the
// optimizer, and two named RNG streams ("shuffle" for batch sampling,
// "augment" for dihedral augmentation) so repeat runs with the same seed
// reproduce the loss log byte for byte.

namespace tdl {

struct TrainStepInfo {
  int64_t step = 0;  // 1-based, as logged
  double lr = 0;
  double dice = 0;
  double ce = 0;
  double total = 0;
};

inline std::string loss_log_header() { return "step, lr, dice_loss, ce_loss, total"; }

inline std::string loss_log_row(const TrainStepInfo& info) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld, %.9g, %.9g, %.9g, %.9g",
                static_cast<long long>(info.step), info.lr, info.dice, info.ce,
                info.total);
  return buf;
}

// Per-pixel argmax over the class axis of [B,K,H,W] logits; ties resolve to
// the lowest class index.
template <typename T>
std::vector<int64_t> argmax_labels(const Tensor<T>& logits) {
  if (logits.rank() != 4)
    throw ShapeError(strcat_msg("argmax_labels: need [B,K,H,W], got ",
                                shape_str(logits.shape())));
  const int64_t b = logits.shape()[0], k = logits.shape()[1];
  const int64_t hw = logits.shape()[2] * logits.shape()[3];
  std::vector<int64_t> out(static_cast<size_t>(b * hw));
  const T* p = logits.data().data();
  for (int64_t bb = 0; bb < b; ++bb)
    for (int64_t px = 0; px < hw; ++px) {
      int64_t best = 0;
      T best_v = p[(bb * k + 0) * hw + px];
      for (int64_t c = 1; c < k; ++c) {
        const T v = p[(bb * k + c) * hw + px];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[static_cast<size_t>(bb * hw + px)] = best;
    }
  return out;
}

// Hard-argmax predictions for every sample, then case-averaged metrics.
// Runs without a tape (pure inference).
template <typename T>
MetricsReport evaluate_model(Model<T>& model, const std::vector<Sample>& samples,
                             bool use_hd95 = false) {
  if (samples.empty()) throw DataError("evaluate: no samples");
  const int64_t k = model.config().num_classes;
  std::vector<MetricsReport> reports;
  reports.reserve(samples.size());
  for (const Sample& s : samples) {
    Tensor<T> x = image_tensor<T>(s);
    Tensor<T> logits = model.forward(x);
    const std::vector<int64_t> pred = argmax_labels(logits);
    reports.push_back(compute_metrics(pred, s.mask, s.h, s.w, k, use_hd95));
  }
  return average_metrics(reports);
}

template <typename T>
class Trainer {
 public:
  Trainer(const RunConfig& run, std::vector<Sample> dataset)
      : run_(run),
        data_(std::move(dataset)),
        model_(Model<T>::build(run.model)),
        opt_(model_.params_mutable(), static_cast<T>(run.momentum),
             static_cast<T>(run.weight_decay)),
        shuffle_(Rng(run.seed).substream("shuffle")),
        augment_(Rng(run.seed).substream("augment")) {
    if (data_.empty()) throw DataError("trainer: empty dataset");
    for (const Sample& s : data_) {
      if (s.h != run_.model.img_size || s.w != run_.model.img_size)
        throw DataError(strcat_msg("trainer: sample is ", s.h, "x", s.w,
                                   " but the model expects ", run_.model.img_size,
                                   "x", run_.model.img_size));
    }
  }

  int64_t total_steps() const {
    if (run_.epochs > 0) {
      const int64_t n = static_cast<int64_t>(data_.size());
      const int64_t per_epoch = (n + run_.batch_size - 1) / run_.batch_size;
      return run_.epochs * per_epoch;
    }
    return run_.steps;
  }

  // One optimization step: sample a batch with replacement, augment, take the
  // gradient of the combined loss, and apply momentum SGD at the polynomial
  // learning rate for the *previous* step count (so step 1 trains at base_lr).
  TrainStepInfo step() {
    std::vector<Sample> batch;
    std::vector<int64_t> ids;
    batch.reserve(static_cast<size_t>(run_.batch_size));
    for (int64_t i = 0; i < run_.batch_size; ++i) {
      const uint64_t idx = shuffle_.next_below(data_.size());
      const Sample& s = data_[static_cast<size_t>(idx)];
      batch.push_back(run_.augment ? augment(s, augment_) : s);
      ids.push_back(i);
    }
    Tensor<T> images = batch_images<T>(batch, ids);
    const std::vector<int64_t> labels = batch_labels(batch, ids);

    const double lr =
        poly_lr(run_.base_lr, step_, total_steps(), run_.poly_power);
    TrainStepInfo info;
    {
      Tape<T> tape;
      opt_.zero_grad();
      Tensor<T> logits = model_.forward(images);
      Tensor<T> d = dice_loss(logits, labels);
      Tensor<T> c = ce_loss(logits, labels);
      Tensor<T> total = add(scale(d, static_cast<T>(run_.lambda_dice)),
                            scale(c, static_cast<T>(run_.lambda_ce)));
      tape.backward(total);
      info.dice = static_cast<double>(d.item());
      info.ce = static_cast<double>(c.item());
      info.total = static_cast<double>(total.item());
    }
    opt_.step(static_cast<T>(lr));
    ++step_;
    info.step = step_;
    info.lr = lr;
    return info;
  }

  // Full loop: writes the header and one row per step to `log` and drops
  // checkpoints into `out_dir` every checkpoint_interval steps plus a final
  // one named final.tdlc.
  void run(std::ostream& log) {
    namespace fs = std::filesystem;
    fs::create_directories(run_.out_dir);
    log << loss_log_header() << "\n";
    const int64_t total = total_steps();
    while (step_ < total) {
      const TrainStepInfo info = step();
      log << loss_log_row(info) << "\n";
      if (run_.checkpoint_interval > 0 && step_ % run_.checkpoint_interval == 0 &&
          step_ < total) {
        save(
            (fs::path(run_.out_dir) / strcat_msg("ckpt-", step_, ".tdlc")).string());
      }
    }
    save((fs::path(run_.out_dir) / "final.tdlc").string());
  }

  void save(const std::string& path) {
    save_checkpoint<T>(path, run_, model_.params(), opt_.state_params(),
                       static_cast<uint32_t>(step_), shuffle_.state());
  }

  Model<T>& model() { return model_; }
  const RunConfig& run_config() const { return run_; }
  int64_t current_step() const { return step_; }

 private:
  RunConfig run_;
  std::vector<Sample> data_;
  Model<T> model_;
  Sgd<T> opt_;
  Rng shuffle_;
  Rng augment_;
  int64_t step_ = 0;
};

}  // namespace tdl
