#include "tdl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tdl/gradcheck.hpp"
#include "tdl/loss.hpp"
#include "tdl/model.hpp"
#include "tdl/oracle.hpp"
#include "tdl/swin.hpp"

namespace tdl {
namespace {

constexpr double kGradTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr double kAttnTol = 1e-6;
constexpr double kMetricTol = 1e-9;

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(shape);
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0;
  for (size_t i = 0; i < a.data().size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

// ---------------------------------------------------------------- gradcheck

SuiteResult suite_gradcheck() {
  SuiteResult res{"gradcheck", true, ""};
  Rng rng(20240811);
  double worst = 0;
  int64_t coords = 0;
  std::string worst_case;

  auto check = [&](const std::string& label,
                   const std::function<Tensor<double>()>& loss_fn,
                   std::vector<Tensor<double>> leaves, int64_t max_coords) {
    GradcheckResult<double> r =
        gradcheck<double>(loss_fn, std::move(leaves), kGradEps, max_coords, &rng);
    coords += r.coords_checked;
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_case = label;
    }
  };

  {  // elementwise chain + matmul + layernorm
    Tensor<double> x = random_tensor({2, 3, 4}, rng);
    Tensor<double> w = random_tensor({4, 5}, rng);
    Tensor<double> b = random_tensor({5}, rng);
    Tensor<double> gamma = random_tensor({5}, rng, 0.5, 1.5);
    Tensor<double> beta = random_tensor({5}, rng);
    check(
        "dense-chain",
        [&]() {
          Tensor<double> y = linear(x, w, b);
          y = layernorm(y, gamma, beta);
          y = gelu(y);
          return mean_all(mul(y, sigmoid(y)));
        },
        {x, w, b, gamma, beta}, -1);
  }
  {  // softmax / log_softmax reductions
    Tensor<double> x = random_tensor({3, 4, 5}, rng, -2.0, 2.0);
    check(
        "softmax",
        [&]() {
          Tensor<double> s = softmax(x, -1);
          Tensor<double> l = log_softmax(x, 1);
          return add(sum_all(mul(s, s)), mean_all(mul(l, s)));
        },
        {x}, -1);
  }
  {  // swin block pair with shifted mask on a 4x4 grid
    Rng init(7);
    SwinBlockPair<double> pair(4, 4, 4, 2, 4, 2, init);
    Tensor<double> x = random_tensor({2, 16, 4}, rng);
    ParamList<double> ps;
    pair.collect("p", ps);
    std::vector<Tensor<double>> leaves{x};
    for (auto& p : ps) leaves.push_back(p.tensor);
    check(
        "swin-pair", [&]() { return mean_all(mul(pair.forward(x), x)); },
        leaves, 4);
  }
  {  // dice + cross-entropy on random logits
    Tensor<double> logits = random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0);
    std::vector<int64_t> labels(2 * 16);
    for (auto& l : labels) l = static_cast<int64_t>(rng.next_below(3));
    check(
        "loss",
        [&]() { return combined_loss(logits, labels, 0.6, 0.4); },
        {logits}, -1);
  }
  {  // full tiny model, sampled coordinates
    ModelConfig cfg;
    cfg.img_size = 16;
    cfg.embed_dim = 8;
    cfg.depths = {2, 2};
    cfg.num_heads = {2, 2};
    cfg.window_size = 4;
    cfg.num_classes = 2;
    cfg.sspp_level = 2;
    cfg.seed = 1;
    Model<double> model = Model<double>::build(cfg);
    Tensor<double> img = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
    std::vector<int64_t> labels(16 * 16);
    for (auto& l : labels) l = static_cast<int64_t>(rng.next_below(2));
    std::vector<Tensor<double>> leaves{img};
    for (auto& p : model.params_mutable()) leaves.push_back(p.tensor);
    check(
        "tiny-model",
        [&]() { return combined_loss(model.forward(img), labels, 0.6, 0.4); },
        leaves, 2);
  }

  res.pass = worst < kGradTol;
  res.detail = strcat_msg("max rel err ", sci(worst), " (tol ", sci(kGradTol),
                          ", worst: ", worst_case, ", ", coords, " coords)");
  return res;
}

// --------------------------------------------------------------- swin oracle

SuiteResult suite_swin_oracle() {
  SuiteResult res{"swin-oracle", true, ""};
  Rng rng(31415);
  double worst = 0;
  std::string worst_case;
  int cases = 0;

  // Plain per-window attention vs the scalar reference, with and without an
  // arbitrary additive mask.
  for (int64_t m : {2, 4}) {
    Rng init(100 + m);
    WindowAttention<double> wa(8, 2, m, init);
    for (double& v : wa.bias_table.mutable_data()) v = rng.uniform(-0.5, 0.5);
    const int64_t p = m * m;
    Tensor<double> x = random_tensor({4, p, 8}, rng);
    for (bool masked : {false, true}) {
      Tensor<double> mask;
      if (masked) {
        mask = Tensor<double>::zeros({2, p, p});
        for (double& v : mask.mutable_data())
          if (rng.next_uniform() < 0.3) v = kAttnMaskValue;
      }
      const double d = max_abs_diff(wa.forward(x, mask),
                                    reference_window_attention(x, wa, mask));
      ++cases;
      if (d > worst) {
        worst = d;
        worst_case = strcat_msg("window M=", m, masked ? " masked" : " plain");
      }
    }
  }

  // Masked shifted attention on full grids vs the same-region reference.
  for (int64_t h : {4, 6, 8})
    for (int64_t w : {4, 6, 8})
      for (int64_t m_pref : {2, 4}) {
        const int64_t m = clamp_window(m_pref, h, w);
        const int64_t s = m / 2;
        if (s == 0) continue;
        Rng init(1000 + h * 100 + w * 10 + m);
        WindowAttention<double> wa(8, 2, m, init);
        for (double& v : wa.bias_table.mutable_data()) v = rng.uniform(-0.5, 0.5);
        Tensor<double> x = random_tensor({2, h, w, 8}, rng);

        Tensor<double> mask = build_shift_mask<double>(h, w, m, s);
        Tensor<double> y = cyclic_shift(x, s);
        y = window_partition(y, m);
        y = wa.forward(y, mask);
        y = window_reverse(y, h, w, m);
        y = cyclic_shift(y, -s);

        const double d = max_abs_diff(y, reference_shifted_attention(x, wa, s));
        ++cases;
        if (d > worst) {
          worst = d;
          worst_case = strcat_msg("grid ", h, "x", w, " M=", m, " s=", s);
        }
      }

  res.pass = worst < kAttnTol;
  res.detail = strcat_msg("max abs diff ", sci(worst), " (tol ", sci(kAttnTol),
                          ", worst: ", worst_case, ", ", cases, " cases)");
  return res;
}

// ------------------------------------------------------------- metrics oracle

SuiteResult suite_metrics_oracle() {
  SuiteResult res{"metrics-oracle", true, ""};
  Rng rng(2718);
  double worst = 0;
  std::string worst_case;

  auto diff_field = [&](double prod, double naive, const char* field, int pair,
                        int64_t cls) {
    if (std::isinf(prod) && std::isinf(naive)) return;
    const double d = std::abs(prod - naive);
    if (d > worst) {
      worst = d;
      worst_case = strcat_msg(field, " pair ", pair, " class ", cls);
    }
  };

  const int64_t side = 16;
  for (int pair = 0; pair < 200; ++pair) {
    const int64_t k = 2 + static_cast<int64_t>(pair % 3);
    std::vector<int64_t> a(side * side), b(side * side);
    for (auto& v : a) v = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(k)));
    for (auto& v : b) v = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(k)));
    MetricsReport rep = compute_metrics(a, b, side, side, k);
    for (int64_t cls = 0; cls < k; ++cls) {
      NaiveClassMetrics nm = naive_class_metrics(a, b, side, side, cls);
      const ClassMetrics& cm = rep.per_class[static_cast<size_t>(cls)];
      diff_field(cm.dice, nm.dice, "dice", pair, cls);
      diff_field(cm.hausdorff, nm.hausdorff, "hausdorff", pair, cls);
      diff_field(cm.sensitivity, nm.sensitivity, "sensitivity", pair, cls);
      diff_field(cm.specificity, nm.specificity, "specificity", pair, cls);
      diff_field(cm.accuracy, nm.accuracy, "accuracy", pair, cls);
    }
  }

  // Documented conventions: identical masks, and class present on one side only.
  std::vector<int64_t> same(side * side, 0);
  for (int64_t i = 0; i < side; ++i) same[static_cast<size_t>(i)] = 1;
  MetricsReport eq = compute_metrics(same, same, side, side, 2);
  bool conventions = eq.per_class[1].dice == 1.0 && eq.per_class[1].hausdorff == 0.0 &&
                     eq.per_class[1].sensitivity == 1.0;
  std::vector<int64_t> empty_mask(side * side, 0);
  MetricsReport one_sided = compute_metrics(same, empty_mask, side, side, 2);
  conventions = conventions && one_sided.per_class[1].dice == 0.0 &&
                std::isinf(one_sided.per_class[1].hausdorff);

  res.pass = worst < kMetricTol && conventions;
  res.detail = strcat_msg("max diff ", sci(worst), " (tol ", sci(kMetricTol),
                          ", 200 pairs), conventions ",
                          conventions ? "ok" : "VIOLATED");
  if (!worst_case.empty() && worst >= kMetricTol)
    res.detail += strcat_msg(", worst: ", worst_case);
  return res;
}

}  // namespace

std::vector<std::string> verify_suite_names() {
  return {"gradcheck", "swin-oracle", "metrics-oracle"};
}

std::vector<SuiteResult> run_verify_suites(const std::string& filter) {
  const auto names = verify_suite_names();
  if (!filter.empty() && std::find(names.begin(), names.end(), filter) == names.end()) {
    std::string known;
    for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError(strcat_msg("unknown suite '", filter, "' (known: ", known, ")"));
  }
  std::vector<SuiteResult> out;
  auto want = [&](const char* n) { return filter.empty() || filter == n; };
  if (want("gradcheck")) out.push_back(suite_gradcheck());
  if (want("swin-oracle")) out.push_back(suite_swin_oracle());
  if (want("metrics-oracle")) out.push_back(suite_metrics_oracle());
  return out;
}

bool all_suites_passed(const std::vector<SuiteResult>& results) {
  return std::all_of(results.begin(), results.end(),
                     [](const SuiteResult& r) { return r.pass; });
}

}  // namespace tdl
