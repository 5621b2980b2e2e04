// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "jiadf/jiadf.hpp"
#include "metric_oracle.hpp"
#include "oracle.hpp"

using namespace jiadf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Records the first failure and keeps going so the detail shows the worst case.
struct Check {
  Outcome out;
  void require(bool ok, const std::string& why) {
    if (!ok && out.pass) {
      out.pass = false;
      out.detail = why;
    }
  }
};

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig cfg = tiny_config();
  const auto r = gradient_check(cfg, 0, 1e-6, 4);
  const double secs = seconds_since(t0);
  Check c;
  const ParamStore all = init_params(cfg);
  c.require(r.params.size() == all.size(), "not every parameter was checked");
  // The late-concat head is not part of the JI-ADF graph.
  std::set<std::string> groups;
  for (const auto& p : r.params) {
    if (p.name.rfind("head.late", 0) == 0) continue;
    groups.insert(param_group(p.name));
    c.require(p.max_abs_grad > 0, "parameter " + p.name + " received no gradient");
  }
  for (const char* g : {"enc.img", "enc.meta", "mmfa", "gate", "head.I", "head.IM", "head.M"})
    c.require(groups.count(g) == 1, std::string("group ") + g + " missing");
  c.require(r.worst < 1e-5, fmt("worst relative error %.3g at %s", r.worst, r.worst_param.c_str()));
  c.require(secs < 30, fmt("took %.1f s", secs));
  if (c.out.pass)
    c.out.detail = fmt("worst %.2e (%s), %zu params in %zu groups, %.2f s", r.worst, r.worst_param.c_str(),
                       r.params.size(), groups.size(), secs);
  return c.out;
}

// Parameters are redrawn from U(-0.5, 0.5) every 100 draws. Much wider draws
// push gate logit gaps past ~37, where double softmax rounds to exactly 0 or 1.
Outcome simplex_suite() {
  const ModelConfig cfg = tiny_config();
  ParamStore p = init_params(cfg);
  std::mt19937_64 rng(11);
  Check c;
  double worst_alpha = 0, worst_final = 0, worst_bound = 0, alpha_lo = 1, alpha_hi = 0;
  for (int draw = 0; draw < 10000; ++draw) {
    if (draw % 100 == 0) oracle::scramble(p, rng, 0.5);
    const auto o = forward(p, oracle::random_record(cfg, rng), cfg);
    const Tensor& a = *o.alpha;
    double sa = 0;
    for (double x : a.data()) {
      sa += x;
      alpha_lo = std::min(alpha_lo, x);
      alpha_hi = std::max(alpha_hi, x);
      c.require(x > 0 && x < 1, fmt("alpha component %.17g outside (0,1) at draw %d", x, draw));
    }
    worst_alpha = std::max(worst_alpha, std::abs(sa - 1));
    double sf = 0;
    for (std::size_t k = 0; k < cfg.classes; ++k) {
      const double v = o.p_final[k];
      sf += v;
      c.require(v >= 0, fmt("negative final posterior at draw %d", draw));
      const double lo = std::min({(*o.p_image)[k], (*o.p_joint)[k], (*o.p_metadata)[k]});
      const double hi = std::max({(*o.p_image)[k], (*o.p_joint)[k], (*o.p_metadata)[k]});
      worst_bound = std::max({worst_bound, lo - v, v - hi});
    }
    worst_final = std::max(worst_final, std::abs(sf - 1));
  }
  c.require(worst_alpha <= 1e-12, fmt("alpha sum off by %.3g", worst_alpha));
  c.require(worst_final <= 1e-12, fmt("final posterior sum off by %.3g", worst_final));
  c.require(worst_bound <= 1e-12, fmt("final posterior outside branch range by %.3g", worst_bound));
  if (c.out.pass)
    c.out.detail = fmt("10000 draws; alpha in [%.3f, %.3f], max |sum alpha - 1| %.1e, max |sum P - 1| %.1e, "
                       "max bound excess %.1e",
                       alpha_lo, alpha_hi, worst_alpha, worst_final, std::max(worst_bound, 0.0));
  return c.out;
}

Outcome degeneracies() {
  Check c;
  std::mt19937_64 rng(12);

  // (a) zero attention path: Full equals SkipOnly.
  {
    const mmfa::Dims d{2, 3, 6, 6, 8};
    Rng init(3);
    ParamStore p;
    mmfa::register_params(p, d, init);
    oracle::scramble(p, rng, 1.0);
    for (std::size_t h = 0; h < d.heads; ++h)
      for (const char* w : mmfa::kProjections) p.value(mmfa::head_param(h, w)).fill(0.0);
    for (const auto& n : {mmfa::kOut, mmfa::kGateW, mmfa::kGateB}) p.value(n).fill(0.0);
    std::normal_distribution<double> n01;
    for (int t = 0; t < 100; ++t) {
      Tensor fI({6}), fM({6});
      for (double& x : fI.raw()) x = n01(rng);
      for (double& x : fM.raw()) x = n01(rng);
      Graph g(p);
      const Tensor full = mmfa::forward(g, g.constant(fI), g.constant(fM), d.heads, MMFAVariant::Full).value();
      const Tensor skip = mmfa::forward(g, g.constant(fI), g.constant(fM), d.heads, MMFAVariant::SkipOnly).value();
      c.require(full == skip, "MMFA full differs from skip-only with a zero attention path");
    }
  }

  // (b) zero gate output layer: JI-ADF equals the fixed average.
  {
    ModelConfig adf = tiny_config();
    ModelConfig avg = adf;
    avg.fusion = FusionVariant::JIMMFA;
    ParamStore p = init_params(adf);
    oracle::scramble(p, rng);
    p.value(heads::kGateW2).fill(0.0);
    p.value(heads::kGateB2).fill(0.0);
    for (int t = 0; t < 100; ++t) {
      const Record r = oracle::random_record(adf, rng);
      c.require(forward(p, r, adf).p_final == forward(p, r, avg).p_final,
                "zero-gate JI-ADF differs from the fixed average");
    }
  }

  // (c) uniform branch posteriors: loss is 2 ln N, both on constructed
  // outputs and through the model with zeroed branch heads.
  double worst = 0;
  for (std::size_t n : {2u, 3u, 5u, 7u}) {
    ModelConfig cfg = tiny_config();
    cfg.classes = n;
    BranchOutputs o;
    o.auxiliary = true;
    o.p_final = Tensor({n}, 1.0 / static_cast<double>(n));
    o.p_image = o.p_joint = o.p_metadata = o.p_final;
    for (std::size_t y = 0; y < n; ++y) worst = std::max(worst, std::abs(total_loss(o, y, cfg) - 2 * std::log(double(n))));

    ParamStore p = init_params(cfg);
    oracle::scramble(p, rng);
    for (const char* tag : heads::kBranchTag) {
      p.value(heads::weight(tag)).fill(0.0);
      p.value(heads::bias(tag)).fill(0.0);
    }
    const Record r = oracle::random_record(cfg, rng, n - 1);
    const double l = total_loss(forward(p, r, cfg), r.label, cfg);
    worst = std::max(worst, std::abs(l - 2 * std::log(double(n))));
  }
  c.require(worst <= 1e-12, fmt("uniform loss off 2 ln N by %.3g", worst));
  if (c.out.pass) c.out.detail = fmt("(a) exact, (b) exact, (c) max deviation %.1e", worst);
  return c.out;
}

Outcome metric_oracles() {
  using namespace metrics;
  std::mt19937_64 rng(13);
  Check c;
  double worst = 0;
  auto track = [&](double got, double want, const char* what) {
    const double d = std::abs(got - want);
    worst = std::max(worst, d);
    c.require(d <= 1e-9, fmt("%s off by %.3g", what, d));
  };
  auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  for (int set = 0; set < 20; ++set) {
    const std::size_t classes = 3 + set % 3;
    auto preds = metric_oracle::random_predictions(200, classes, rng);
    // Coarsen posteriors so ranking ties occur, then renormalize.
    if (set % 2)
      for (auto& p : preds) {
        double s = 0;
        for (double& x : p.posterior) s += (x = std::round(x * 10) / 10 + 0.01);
        for (double& x : p.posterior) x /= s;
      }
    const auto rep = evaluate(preds);
    for (std::size_t k = 0; k < classes; ++k) {
      std::vector<double> s;
      metric_oracle::Labels y;
      double tp = 0, fp = 0, fn = 0, tn = 0;
      for (const auto& p : preds) {
        s.push_back(p.posterior[k]);
        y.push_back(p.label == k);
        const bool pos = p.label == k, hit = p.predicted == k;
        (pos ? (hit ? tp : fn) : (hit ? fp : tn)) += 1;
      }
      const auto& r = rep.classes[k];
      c.require(r.counts.tp == tp && r.counts.fp == fp && r.counts.fn == fn && r.counts.tn == tn,
                "confusion counts differ from hand counting");
      track(*r.auc, metric_oracle::pairwise_auc(s, y), "AUC");
      track(*r.auc_sens80, metric_oracle::exact_pauc(s, y), "partial AUC");
      track(*r.average_precision, metric_oracle::sweep_ap(s, y), "average precision");
      track(r.accuracy, (tp + tn) / 200.0, "accuracy");
      track(r.sensitivity, ratio(tp, tp + fn), "sensitivity");
      track(r.specificity, ratio(tn, tn + fp), "specificity");
      track(r.ppv, ratio(tp, tp + fp), "PPV");
      track(r.npv, ratio(tn, tn + fn), "NPV");
      track(r.dice, ratio(2 * tp, 2 * tp + fp + fn), "dice");
    }
    // Per-bin recomputation of ECE.
    double ece = 0;
    for (std::size_t b = 0; b < kCalibrationBins; ++b) {
      const double lo = double(b) / kCalibrationBins, hi = double(b + 1) / kCalibrationBins;
      double n = 0, conf = 0, hit = 0;
      for (const auto& p : preds) {
        const double m = *std::max_element(p.posterior.begin(), p.posterior.end());
        if (m > lo && m <= hi) n += 1, conf += m, hit += p.label == p.predicted;
      }
      if (n > 0) ece += n / preds.size() * std::abs(hit / n - conf / n);
    }
    track(rep.calibration.ece, ece, "ECE");
  }
  if (c.out.pass) c.out.detail = fmt("20 sets of 200 samples, max deviation %.1e", worst);
  return c.out;
}

Outcome optimizer_trace() {
  Check c;
  double worst = 0;
  for (const AdamWConfig cfg : {AdamWConfig{}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.01}}) {
    ParamStore p;
    p.add("theta", Tensor::scalar(1.0));
    AdamW opt(p, cfg);
    double theta = 1.0, m = 0, v = 0;
    for (int t = 1; t <= 10; ++t) {
      const double g = 2 * theta;
      m = cfg.beta1 * m + (1 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
      const double mh = m / (1 - std::pow(cfg.beta1, t)), vh = v / (1 - std::pow(cfg.beta2, t));
      theta -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * theta);
      p.grad("theta")[0] = 2 * p.value("theta")[0];
      opt.step(p);
      worst = std::max(worst, std::abs(p.value("theta")[0] - theta));
    }
  }
  c.require(worst <= 1e-12, fmt("trace off by %.3g", worst));
  ParamStore p;
  p.add("w", Tensor::vector({1.5, -2.0, 0.25}));
  const AdamWConfig cfg{1e-3, 0.9, 0.999, 1e-8, 0.1};
  AdamW opt(p, cfg);
  const Tensor before = p.value("w");
  opt.step(p);
  for (std::size_t i = 0; i < 3; ++i)
    c.require(p.value("w")[i] == before[i] * (1 - cfg.lr * cfg.weight_decay), "zero-gradient step is not an exact shrink");
  if (c.out.pass) c.out.detail = fmt("10-step max deviation %.1e; zero-gradient shrink exact", worst);
  return c.out;
}

data::DatasetTable complementary_data() {
  data::DatasetSpec s;
  s.counts = {500, 500, 500};
  s.complementary = true;
  s.snr_clinical = s.snr_dermoscopic = s.snr_metadata = 3.0;
  s.test_fraction = 0.2;
  s.seed = 7;
  return data::generate(s);
}

Outcome learning_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.classes = 3;
  const auto table = ensure_split(complementary_data(), 0.8, cfg.seed);
  TrainOptions opt;
  opt.epochs = 50;
  const auto r = train(table, cfg, opt);
  const auto rep = evaluate_split(r.best.params, table, Split::Test, cfg);
  const double secs = seconds_since(t0);
  Check c;
  c.require(table.select(Split::Test).size() == 300, "test split is not 300 records");
  c.require(rep.macro_f1 >= 0.90, fmt("test macro-F1 %.4f", rep.macro_f1));
  c.require(secs < 300, fmt("took %.0f s", secs));
  if (c.out.pass)
    c.out.detail = fmt("test macro-F1 %.4f, macro AUC %.4f, %zu epochs, %.0f s", rep.macro_f1, rep.macro.auc,
                       r.epochs.size(), secs);
  return c.out;
}

std::map<std::string, double> mean_auc(const std::vector<AblationRow>& rows) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    acc[r.config].first += r.report.macro.auc;
    acc[r.config].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / v.second;
  return out;
}

Outcome ablation_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig base;
  base.classes = 3;
  base.encoder_hidden = 32;
  base.image_dim = base.metadata_dim = 32;
  base.joint_dim = 64;
  base.heads = 4;
  base.head_dim = 16;
  base.gate_hidden = 16;
  TrainOptions opt;
  opt.epochs = 20;
  const auto table = complementary_data();
  const auto modality = mean_auc(run_ablation(table, AblationSuite::Modality, base, opt, 3, 0));
  const auto fusion = mean_auc(run_ablation(table, AblationSuite::Fusion, base, opt, 3, 0));
  Check c;
  const double tri = modality.at("C+D+M");
  double margin = INFINITY;
  for (const char* u : {"C", "D", "M"}) margin = std::min(margin, tri - modality.at(u));
  c.require(margin >= 0.03, fmt("(a) trimodal margin over best unimodal %.4f", margin));
  std::string ladder;
  double worst_drop = 0;
  for (std::size_t i = 0; i < kFusionLadder.size(); ++i) {
    const double a = fusion.at(to_string(kFusionLadder[i]));
    ladder += fmt("%s%.4f", i ? " " : "", a);
    if (i) worst_drop = std::max(worst_drop, fusion.at(to_string(kFusionLadder[i - 1])) - a);
  }
  c.require(worst_drop <= 0.01, fmt("(b) ladder drops by %.4f: %s", worst_drop, ladder.c_str()));
  if (c.out.pass)
    c.out.detail = fmt("(a) C+D+M %.4f vs unimodal C %.4f D %.4f M %.4f, margin %.4f; (b) ladder %s; %.0f s", tri,
                       modality.at("C"), modality.at("D"), modality.at("M"), margin, ladder.c_str(),
                       seconds_since(t0));
  else
    c.out.detail += fmt(" [C+D+M %.4f, C %.4f, D %.4f, M %.4f; ladder %s]", tri, modality.at("C"), modality.at("D"),
                        modality.at("M"), ladder.c_str());
  return c.out;
}

Outcome determinism() {
  ModelConfig cfg;
  cfg.clinical_dim = cfg.dermoscopic_dim = cfg.metadata_raw_dim = 6;
  cfg.encoder_hidden = 12;
  cfg.image_dim = cfg.metadata_dim = 10;
  cfg.joint_dim = 16;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.gate_hidden = 8;
  cfg.classes = 3;
  cfg.seed = 4;
  data::DatasetSpec s;
  s.counts = {40, 40, 40};
  s.clinical_dim = s.dermoscopic_dim = s.metadata_dim = 6;
  s.seed = 21;
  const auto table = data::split_train_val(data::generate(s), 0.8, 1);
  const fs::path dir = fs::temp_directory_path() / ("jiadf_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto losses = [](const TrainResult& r) {
    std::vector<double> out;
    for (const auto& e : r.epochs) out.push_back(e.train_loss);
    return out;
  };
  Check c;
  TrainOptions opt;
  opt.lr = 1e-3;
  opt.seed = 2;
  opt.epochs = 6;
  const auto a = train(table, cfg, opt), b = train(table, cfg, opt);
  c.require(losses(a) == losses(b), "identical seeds gave different losses");

  save_checkpoint(dir / "ck", a.last);
  const Checkpoint back = load_checkpoint(dir / "ck");
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Record r = oracle::random_record(cfg, rng);
    c.require(forward(back.params, r, cfg).p_final == forward(a.last.params, r, cfg).p_final,
              "reloaded checkpoint changes the forward output");
  }

  opt.epochs = 3;
  opt.out_dir = dir / "run";
  const auto first = train(table, cfg, opt);
  const auto resumed = train(table, cfg, opt, load_checkpoint(dir / "run" / "last"));
  auto joined = losses(first);
  const auto tail = losses(resumed);
  joined.insert(joined.end(), tail.begin(), tail.end());
  c.require(joined == losses(a), "resumed losses differ from the uninterrupted run");
  for (std::size_t i = 0; i < a.last.params.size(); ++i)
    c.require(resumed.last.params.entry(i).value == a.last.params.entry(i).value,
              "resumed parameters differ from the uninterrupted run");
  fs::remove_all(dir);
  if (c.out.pass) c.out.detail = "6-epoch losses, 50 reloaded forwards and 3+3 resume all bit-exact";
  return c.out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity}, {"simplex suite", simplex_suite},
      {"degeneracy equalities", degeneracies},  {"metric oracles", metric_oracles},
      {"optimizer trace", optimizer_trace},     {"learning sanity", learning_sanity},
      {"ablation ordering", ablation_ordering}, {"determinism and persistence", determinism}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
