#pragma once

#include <limits>
#include <string>
#include <vector>

#include "tdl/common.hpp"

// Segmentation metrics over hard label maps: per-class one-vs-rest Dice,
// Hausdorff distance between class boundary pixel sets (exact by default,
// 95th-percentile variant on request), sensitivity, specificity, accuracy,
// plus a macro row averaged over the foreground classes. Conventions, all
// reported rather than silently skipped: a class empty in both maps scores
// dice 1 / hausdorff 0 / rates 1; a class empty on exactly one side scores
// dice 0 and an infinite hausdorff (flagged).

namespace tdl {

struct ClassMetrics {
  double dice = 0;
  double hausdorff = 0;  // +inf when exactly one side is empty
  double sensitivity = 0;
  double specificity = 0;
  double accuracy = 0;
};

struct MetricsReport {
  int64_t num_classes = 0;
  std::vector<ClassMetrics> per_class;  // size K
  ClassMetrics macro;                   // mean over classes 1..K-1
  double mean_dice = 0;                 // macro.dice

  // Header plus K+1 rows (classes 0..K-1, then "macro"); infinite
  // hausdorff prints as "inf".
  std::string to_csv() const;
};

// Boundary pixels of one class: pixels of that class with a 4-neighbour of a
// different class or lying on the image border.
std::vector<std::pair<int64_t, int64_t>> boundary_pixels(
    const std::vector<int64_t>& labels, int64_t h, int64_t w, int64_t cls);

// Exact symmetric Hausdorff distance between two point sets; 0 when both are
// empty, +inf when exactly one is.
double hausdorff_distance(const std::vector<std::pair<int64_t, int64_t>>& a,
                          const std::vector<std::pair<int64_t, int64_t>>& b);

// 95th percentile of the pooled directed nearest-neighbour distances.
double hausdorff95_distance(const std::vector<std::pair<int64_t, int64_t>>& a,
                            const std::vector<std::pair<int64_t, int64_t>>& b);

// Metrics for one prediction/truth pair of [H,W] label maps.
MetricsReport compute_metrics(const std::vector<int64_t>& pred,
                              const std::vector<int64_t>& truth, int64_t h, int64_t w,
                              int64_t k, bool use_hd95 = false);

// Dataset-level report: per-class metrics averaged over the pairs
// (case-averaged, so each sample contributes equally).
MetricsReport average_metrics(const std::vector<MetricsReport>& reports);

}  // namespace tdl
