#include "tdl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace tdl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string metric_str(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Squared nearest distance from p to the set b, with early exit once a
// zero-distance match is found.
int64_t nearest_sq(const std::pair<int64_t, int64_t>& p,
                   const std::vector<std::pair<int64_t, int64_t>>& b) {
  int64_t best = std::numeric_limits<int64_t>::max();
  for (const auto& q : b) {
    const int64_t dy = p.first - q.first;
    const int64_t dx = p.second - q.second;
    const int64_t d = dy * dy + dx * dx;
    if (d < best) {
      best = d;
      if (best == 0) break;
    }
  }
  return best;
}

double rate(int64_t num, int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "class, dice, hausdorff, sensitivity, specificity, accuracy\n";
  auto row = [&os](const std::string& name, const ClassMetrics& m) {
    os << name << ", " << metric_str(m.dice) << ", " << metric_str(m.hausdorff) << ", "
       << metric_str(m.sensitivity) << ", " << metric_str(m.specificity) << ", "
       << metric_str(m.accuracy) << "\n";
  };
  for (int64_t c = 0; c < num_classes; ++c)
    row(std::to_string(c), per_class[static_cast<size_t>(c)]);
  row("macro", macro);
  return os.str();
}

std::vector<std::pair<int64_t, int64_t>> boundary_pixels(
    const std::vector<int64_t>& labels, int64_t h, int64_t w, int64_t cls) {
  std::vector<std::pair<int64_t, int64_t>> out;
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      if (labels[static_cast<size_t>(r * w + c)] != cls) continue;
      const bool border = r == 0 || c == 0 || r == h - 1 || c == w - 1;
      const bool exposed =
          border || labels[static_cast<size_t>((r - 1) * w + c)] != cls ||
          labels[static_cast<size_t>((r + 1) * w + c)] != cls ||
          labels[static_cast<size_t>(r * w + c - 1)] != cls ||
          labels[static_cast<size_t>(r * w + c + 1)] != cls;
      if (exposed) out.emplace_back(r, c);
    }
  return out;
}

double hausdorff_distance(const std::vector<std::pair<int64_t, int64_t>>& a,
                          const std::vector<std::pair<int64_t, int64_t>>& b) {
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) return kInf;
  int64_t worst_sq = 0;
  for (const auto& p : a) worst_sq = std::max(worst_sq, nearest_sq(p, b));
  for (const auto& q : b) worst_sq = std::max(worst_sq, nearest_sq(q, a));
  return std::sqrt(static_cast<double>(worst_sq));
}

double hausdorff95_distance(const std::vector<std::pair<int64_t, int64_t>>& a,
                            const std::vector<std::pair<int64_t, int64_t>>& b) {
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) return kInf;
  std::vector<double> pooled;
  pooled.reserve(a.size() + b.size());
  for (const auto& p : a) pooled.push_back(std::sqrt(static_cast<double>(nearest_sq(p, b))));
  for (const auto& q : b) pooled.push_back(std::sqrt(static_cast<double>(nearest_sq(q, a))));
  std::sort(pooled.begin(), pooled.end());
  const size_t idx = static_cast<size_t>(
      std::ceil(0.95 * static_cast<double>(pooled.size()))) - 1;
  return pooled[std::min(idx, pooled.size() - 1)];
}

MetricsReport compute_metrics(const std::vector<int64_t>& pred,
                              const std::vector<int64_t>& truth, int64_t h, int64_t w,
                              int64_t k, bool use_hd95) {
  if (pred.size() != truth.size() || static_cast<int64_t>(pred.size()) != h * w)
    throw ShapeError(strcat_msg("metrics: got ", pred.size(), " predictions and ",
                                truth.size(), " labels for ", h * w, " pixels"));
  MetricsReport rep;
  rep.num_classes = k;
  rep.per_class.resize(static_cast<size_t>(k));
  const int64_t total = h * w;
  for (int64_t cls = 0; cls < k; ++cls) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (int64_t i = 0; i < total; ++i) {
      const bool p = pred[static_cast<size_t>(i)] == cls;
      const bool t = truth[static_cast<size_t>(i)] == cls;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    const int64_t tn = total - tp - fp - fn;
    ClassMetrics& m = rep.per_class[static_cast<size_t>(cls)];
    m.dice = (tp + fp + fn) == 0 ? 1.0
                                 : 2.0 * static_cast<double>(tp) /
                                       static_cast<double>(2 * tp + fp + fn);
    m.sensitivity = rate(tp, tp + fn);
    m.specificity = rate(tn, tn + fp);
    m.accuracy = rate(tp + tn, total);
    const auto pb = boundary_pixels(pred, h, w, cls);
    const auto tb = boundary_pixels(truth, h, w, cls);
    m.hausdorff = use_hd95 ? hausdorff95_distance(pb, tb) : hausdorff_distance(pb, tb);
  }
  ClassMetrics& mac = rep.macro;
  const int64_t fg = k - 1;
  for (int64_t cls = 1; cls < k; ++cls) {
    const ClassMetrics& m = rep.per_class[static_cast<size_t>(cls)];
    mac.dice += m.dice / fg;
    mac.hausdorff += m.hausdorff / fg;
    mac.sensitivity += m.sensitivity / fg;
    mac.specificity += m.specificity / fg;
    mac.accuracy += m.accuracy / fg;
  }
  rep.mean_dice = mac.dice;
  return rep;
}

MetricsReport average_metrics(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw DataError("metrics: no reports to average");
  MetricsReport out;
  out.num_classes = reports[0].num_classes;
  out.per_class.resize(static_cast<size_t>(out.num_classes));
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    if (r.num_classes != out.num_classes)
      throw DataError("metrics: class-count mismatch across reports");
    for (size_t c = 0; c < out.per_class.size(); ++c) {
      out.per_class[c].dice += r.per_class[c].dice / n;
      out.per_class[c].hausdorff += r.per_class[c].hausdorff / n;
      out.per_class[c].sensitivity += r.per_class[c].sensitivity / n;
      out.per_class[c].specificity += r.per_class[c].specificity / n;
      out.per_class[c].accuracy += r.per_class[c].accuracy / n;
    }
    out.macro.dice += r.macro.dice / n;
    out.macro.hausdorff += r.macro.hausdorff / n;
    out.macro.sensitivity += r.macro.sensitivity / n;
    out.macro.specificity += r.macro.specificity / n;
    out.macro.accuracy += r.macro.accuracy / n;
  }
  out.mean_dice = out.macro.dice;
  return out;
}

}  // namespace tdl
