#pragma once

// Evaluation panel: one-vs-rest confusion metrics, ROC AUC, partial AUC in
// the high-sensitivity band, average precision, macro-F1 and calibration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jiadf/error.hpp"
#include "jiadf/tensor.hpp"

namespace jiadf::metrics {

// Raised when a ranking metric is undefined (e.g. only one class present).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

struct Prediction {
  std::size_t label = 0;
  std::size_t predicted = 0;
  std::vector<double> posterior;
};

using PredictionSet = std::vector<Prediction>;

inline void validate(const PredictionSet& preds) {
  if (preds.empty()) throw DataError("empty prediction set");
  const std::size_t n = preds.front().posterior.size();
  for (const auto& p : preds) {
    if (p.posterior.size() != n) throw DimensionError("ragged posteriors in prediction set");
    if (p.label >= n || p.predicted >= n) throw DimensionError("class index out of range in prediction set");
    double s = 0.0;
    for (double x : p.posterior) s += x;
    if (std::abs(s - 1.0) > 1e-6) throw NumericError("posterior off the simplex in prediction set");
  }
}

inline std::size_t class_count(const PredictionSet& preds) { return preds.front().posterior.size(); }

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const Counts&, const Counts&) = default;
};

inline Counts confusion_counts(const PredictionSet& preds, std::size_t c) {
  Counts k;
  for (const auto& p : preds) {
    const bool truth = p.label == c;
    const bool guess = p.predicted == c;
    if (truth && guess) ++k.tp;
    else if (!truth && guess) ++k.fp;
    else if (truth && !guess) ++k.fn;
    else ++k.tn;
  }
  return k;
}

struct ConfusionMetrics {
  double accuracy = 0, sensitivity = 0, specificity = 0, dice = 0, ppv = 0, npv = 0;
  // Names of cells whose denominator was zero (reported as 0).
  std::vector<std::string> degenerate;
};

inline ConfusionMetrics per_class_metrics(const Counts& k) {
  ConfusionMetrics m;
  auto ratio = [&](std::size_t num, std::size_t den, const char* name) {
    if (den == 0) {
      m.degenerate.emplace_back(name);
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.accuracy = ratio(k.tp + k.tn, k.total(), "accuracy");
  m.sensitivity = ratio(k.tp, k.tp + k.fn, "sensitivity");
  m.specificity = ratio(k.tn, k.tn + k.fp, "specificity");
  m.dice = ratio(2 * k.tp, 2 * k.tp + k.fp + k.fn, "dice");
  m.ppv = ratio(k.tp, k.tp + k.fp, "ppv");
  m.npv = ratio(k.tn, k.tn + k.fn, "npv");
  return m;
}

struct RocPoint {
  double fpr;
  double tpr;
};

namespace detail {

struct Ranked {
  std::vector<std::size_t> order;  // descending score
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline Ranked rank(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  Ranked r;
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::uint8_t l : labels) (l ? r.positives : r.negatives)++;
  return r;
}

// Calls visit(tp, fp) after each group of tied scores, in descending order.
template <typename Visit>
void sweep(std::span<const double> scores, std::span<const std::uint8_t> labels, const Ranked& r, Visit visit) {
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < r.order.size();) {
    const double s = scores[r.order[i]];
    while (i < r.order.size() && scores[r.order[i]] == s) {
      (labels[r.order[i]] ? tp : fp)++;
      ++i;
    }
    visit(tp, fp);
  }
}

inline void require_both_classes(const Ranked& r) {
  if (r.positives == 0 || r.negatives == 0) {
    throw UndefinedMetric("ranking metric undefined: labels contain a single class");
  }
}

}  // namespace detail

// Empirical ROC curve from (0,0) to (1,1), one vertex per distinct score.
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  auto r = detail::rank(scores, labels);
  detail::require_both_classes(r);
  const double P = static_cast<double>(r.positives), N = static_cast<double>(r.negatives);
  std::vector<RocPoint> pts{{0.0, 0.0}};
  detail::sweep(scores, labels, r, [&](std::size_t tp, std::size_t fp) {
    pts.push_back({static_cast<double>(fp) / N, static_cast<double>(tp) / P});
  });
  return pts;
}

// Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 P(tie), via midranks.
inline double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  auto r = detail::rank(scores, labels);
  detail::require_both_classes(r);
  // Ascending midranks.
  const std::size_t n = scores.size();
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[r.order[j]] == scores[r.order[i]]) ++j;
    // Descending positions i..j-1 map to ascending ranks n-j+1 .. n-i.
    const double mid = (static_cast<double>(n - j + 1) + static_cast<double>(n - i)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[r.order[k]]) pos_rank_sum += mid;
    i = j;
  }
  const double P = static_cast<double>(r.positives), N = static_cast<double>(r.negatives);
  return (pos_rank_sum - P * (P + 1.0) / 2.0) / (P * N);
}

inline constexpr double kHighSensitivity = 0.8;

// Area under the piecewise-linear ROC curve within the band TPR in [0.8, 1],
// i.e. the integral of (1 - FPR(t)) dt over that band, divided by the band
// width 0.2. A perfect ranking scores 1; the chance diagonal scores 0.1.
inline double partial_auc_high_sensitivity(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto pts = roc_curve(scores, labels);
  const double lo = kHighSensitivity, hi = 1.0;
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const RocPoint a = pts[i - 1], b = pts[i];
    if (b.tpr <= a.tpr) continue;  // horizontal run: no TPR extent
    const double t0 = std::max(a.tpr, lo), t1 = std::min(b.tpr, hi);
    if (t1 <= t0) continue;
    auto fpr_at = [&](double t) { return a.fpr + (b.fpr - a.fpr) * (t - a.tpr) / (b.tpr - a.tpr); };
    area += (t1 - t0) * (1.0 - 0.5 * (fpr_at(t0) + fpr_at(t1)));
  }
  return std::clamp(area / (hi - lo), 0.0, 1.0);
}

// Step-interpolated AP: sum over distinct thresholds of (R_k - R_{k-1}) P_k.
inline double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  auto r = detail::rank(scores, labels);
  if (r.positives == 0) throw UndefinedMetric("average precision undefined: no positives");
  const double P = static_cast<double>(r.positives);
  double ap = 0.0, prev_recall = 0.0;
  detail::sweep(scores, labels, r, [&](std::size_t tp, std::size_t fp) {
    const double recall = static_cast<double>(tp) / P;
    if (recall > prev_recall) {
      ap += (recall - prev_recall) * static_cast<double>(tp) / static_cast<double>(tp + fp);
      prev_recall = recall;
    }
  });
  return ap;
}

inline double macro_f1(const PredictionSet& preds) {
  validate(preds);
  const std::size_t n = class_count(preds);
  double s = 0.0;
  for (std::size_t c = 0; c < n; ++c) s += per_class_metrics(confusion_counts(preds, c)).dice;
  return s / static_cast<double>(n);
}

struct ReliabilityBin {
  double lower = 0, upper = 0;
  std::size_t count = 0;
  double mean_confidence = 0;
  double accuracy = 0;
};

struct Calibration {
  double ece = 0;
  std::vector<ReliabilityBin> bins;  // all bins, including empty ones
};

inline constexpr std::size_t kCalibrationBins = 15;

// Equal-width bins on (0, 1]; bin b holds confidences in (b/B, (b+1)/B].
inline std::size_t confidence_bin(double conf, std::size_t bins) {
  const double B = static_cast<double>(bins);
  auto edge = [&](std::size_t k) { return static_cast<double>(k) / B; };
  double guess = std::ceil(conf * B) - 1.0;
  std::size_t b = guess < 0 ? 0 : std::min(static_cast<std::size_t>(guess), bins - 1);
  while (b > 0 && conf <= edge(b)) --b;
  while (b + 1 < bins && conf > edge(b + 1)) ++b;
  return b;
}

inline Calibration expected_calibration_error(const PredictionSet& preds, std::size_t bins = kCalibrationBins) {
  validate(preds);
  if (bins == 0) throw Error("calibration needs at least one bin");
  Calibration cal;
  cal.bins.resize(bins);
  std::vector<double> conf_sum(bins, 0.0), hit_sum(bins, 0.0);
  for (const auto& p : preds) {
    const double conf = *std::max_element(p.posterior.begin(), p.posterior.end());
    const std::size_t b = confidence_bin(conf, bins);
    cal.bins[b].count++;
    conf_sum[b] += conf;
    hit_sum[b] += p.predicted == p.label ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(preds.size());
  for (std::size_t b = 0; b < bins; ++b) {
    auto& bin = cal.bins[b];
    bin.lower = static_cast<double>(b) / static_cast<double>(bins);
    bin.upper = static_cast<double>(b + 1) / static_cast<double>(bins);
    if (bin.count == 0) continue;
    const double cnt = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / cnt;
    bin.accuracy = hit_sum[b] / cnt;
    cal.ece += (cnt / n) * std::abs(bin.accuracy - bin.mean_confidence);
  }
  return cal;
}

// One row of the per-class panel. Ranking metrics are absent when the class
// has no positives (or no negatives) in the evaluated set.
struct ClassReport {
  std::optional<double> auc;
  std::optional<double> auc_sens80;
  std::optional<double> average_precision;
  double accuracy = 0, sensitivity = 0, specificity = 0, dice = 0, ppv = 0, npv = 0;
  Counts counts;
  std::vector<std::string> degenerate;
};

struct MacroReport {
  double auc = 0, auc_sens80 = 0, average_precision = 0;
  double accuracy = 0, sensitivity = 0, specificity = 0, dice = 0, ppv = 0, npv = 0;
};

struct MetricsReport {
  std::vector<ClassReport> classes;
  MacroReport macro;
  double top1_accuracy = 0;
  double macro_f1 = 0;
  Calibration calibration;
  std::vector<std::string> warnings;
};

inline MetricsReport evaluate(const PredictionSet& preds, std::size_t bins = kCalibrationBins) {
  validate(preds);
  const std::size_t n = class_count(preds);
  MetricsReport rep;
  std::vector<double> scores(preds.size());
  std::vector<std::uint8_t> labels(preds.size());
  std::span<const std::uint8_t> label_span(labels);

  struct Acc {
    double sum = 0;
    std::size_t n = 0;
    void add(double x) { sum += x, ++n; }
    double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  } auc, pauc, ap, acc, sens, spec, dice, ppv, npv;

  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      scores[i] = preds[i].posterior[c];
      labels[i] = preds[i].label == c;
    }
    ClassReport cr;
    cr.counts = confusion_counts(preds, c);
    const auto cm = per_class_metrics(cr.counts);
    cr.accuracy = cm.accuracy;
    cr.sensitivity = cm.sensitivity;
    cr.specificity = cm.specificity;
    cr.dice = cm.dice;
    cr.ppv = cm.ppv;
    cr.npv = cm.npv;
    cr.degenerate = cm.degenerate;
    try {
      cr.auc = roc_auc(scores, label_span);
      cr.auc_sens80 = partial_auc_high_sensitivity(scores, label_span);
      auc.add(*cr.auc);
      pauc.add(*cr.auc_sens80);
    } catch (const UndefinedMetric&) {
      rep.warnings.push_back("class " + std::to_string(c) + ": AUC undefined (single-class labels), skipped in macro");
    }
    try {
      cr.average_precision = average_precision(scores, label_span);
      ap.add(*cr.average_precision);
    } catch (const UndefinedMetric&) {
      rep.warnings.push_back("class " + std::to_string(c) + ": average precision undefined (no positives)");
    }
    acc.add(cr.accuracy);
    sens.add(cr.sensitivity);
    spec.add(cr.specificity);
    dice.add(cr.dice);
    ppv.add(cr.ppv);
    npv.add(cr.npv);
    rep.classes.push_back(std::move(cr));
  }
  rep.macro = {auc.mean(), pauc.mean(), ap.mean(),  acc.mean(), sens.mean(),
               spec.mean(), dice.mean(), ppv.mean(), npv.mean()};
  rep.macro_f1 = dice.mean();
  std::size_t hits = 0;
  for (const auto& p : preds) hits += p.predicted == p.label;
  rep.top1_accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
  rep.calibration = expected_calibration_error(preds, bins);
  return rep;
}

}  // namespace jiadf::metrics
