#pragma once

// Training loop with best-checkpoint selection on validation macro-F1,
// evaluation, and the three ablation suites.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "jiadf/checkpoint.hpp"
#include "jiadf/data.hpp"
#include "jiadf/metrics.hpp"
#include "jiadf/model.hpp"
#include "jiadf/optim.hpp"

namespace jiadf {

struct TrainOptions {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double train_fraction = 0.8;
  PlateauConfig plateau;
  std::uint64_t seed = 0;
  // Run directory; "best" and "last" checkpoints are written below it when set.
  std::optional<std::filesystem::path> out_dir;
  std::ostream* log = nullptr;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based, counted across resumes
  double train_loss = 0;
  double val_macro_f1 = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  Checkpoint best;  // parameters with the highest validation macro-F1
  Checkpoint last;  // full state after the final epoch, for resuming
  std::vector<std::string> warnings;
  double seconds = 0;
};

inline metrics::PredictionSet predict_all(const ParamStore& params, const std::vector<Record>& records,
                                          const ModelConfig& cfg) {
  metrics::PredictionSet preds;
  preds.reserve(records.size());
  for (const Record& r : records) {
    Tensor p = forward(params, r, cfg).p_final;
    preds.push_back({r.label, heads::predict(p), p.raw()});
  }
  return preds;
}

// Tags untagged records train/val unless the table already carries a
// train/val assignment.
inline data::DatasetTable ensure_split(data::DatasetTable table, double fraction, std::uint64_t seed,
                                       std::vector<std::string>* warnings = nullptr) {
  bool has_unsplit = false, has_train = false;
  for (const auto& r : table.records) {
    has_unsplit |= r.split == Split::Unsplit;
    has_train |= r.split == Split::Train;
  }
  if (has_unsplit || !has_train) table = data::split_train_val(std::move(table), fraction, seed, warnings);
  return table;
}

inline void check_widths(const data::DatasetTable& t, const ModelConfig& c) {
  if (t.clinical_dim != c.clinical_dim || t.dermoscopic_dim != c.dermoscopic_dim ||
      t.metadata_dim != c.metadata_raw_dim) {
    throw DataError("dataset widths (" + std::to_string(t.clinical_dim) + ", " + std::to_string(t.dermoscopic_dim) +
                    ", " + std::to_string(t.metadata_dim) + ") do not match config (" +
                    std::to_string(c.clinical_dim) + ", " + std::to_string(c.dermoscopic_dim) + ", " +
                    std::to_string(c.metadata_raw_dim) + ")");
  }
  if (!t.records.empty() && t.max_label() >= c.classes) {
    throw DataError("dataset label " + std::to_string(t.max_label()) + " exceeds config classes " +
                    std::to_string(c.classes));
  }
}

inline Checkpoint fresh_state(const ModelConfig& cfg, const TrainOptions& opt) {
  Checkpoint ck;
  ck.config = cfg;
  ck.params = init_params(cfg);
  ck.optimizer = AdamW(ck.params, {opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
  ck.scheduler = PlateauScheduler(opt.lr, opt.plateau);
  return ck;
}

// Runs opt.epochs epochs on the table's train split, starting from `resume`
// when given. Per epoch: seeded shuffle, batch loss, backward, AdamW step;
// then validation macro-F1 drives the plateau scheduler and the best
// checkpoint (strict improvement only).
inline TrainResult train(const data::DatasetTable& table, const ModelConfig& cfg, const TrainOptions& opt,
                         std::optional<Checkpoint> resume = std::nullopt) {
  const auto started = std::chrono::steady_clock::now();
  cfg.validate();
  check_widths(table, cfg);
  const std::vector<Record> train_set = table.select(Split::Train);
  std::vector<Record> val_set = table.select(Split::Val);
  TrainResult result;
  if (train_set.empty()) throw DataError("dataset has no train-split records");
  if (val_set.empty()) {
    result.warnings.push_back("no validation records; selecting on training macro-F1");
    val_set = train_set;
  }

  Checkpoint state = resume ? std::move(*resume) : fresh_state(cfg, opt);
  if (resume) {
    require_compatible(state.params, init_params(cfg));
    state.config = cfg;
  }
  auto save = [&](const char* which, const Checkpoint& ck) {
    if (opt.out_dir) save_checkpoint(*opt.out_dir / which, ck);
  };
  result.best = state;
  if (!resume) save("best", state);

  const std::size_t first = state.epoch;
  for (std::size_t e = first; e < first + opt.epochs; ++e) {
    const auto batches = data::batch_iter(train_set, opt.batch_size, opt.seed, e);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      double loss = 0.0;
      try {
        loss = loss_and_gradient(state.params, batches[b], cfg);
        if (!std::isfinite(loss)) throw NumericError("non-finite loss");
        state.optimizer.step(state.params);
      } catch (const NumericError& err) {
        throw NumericError("epoch " + std::to_string(e + 1) + ", batch " + std::to_string(b) + ": " + err.what());
      }
      loss_sum += loss;
    }
    const double f1 = metrics::macro_f1(predict_all(state.params, val_set, cfg));
    const double lr = state.scheduler.update(f1);
    state.optimizer.set_lr(lr);
    state.epoch = e + 1;
    EpochLog log{e + 1, loss_sum / static_cast<double>(batches.size()), f1, lr};
    result.epochs.push_back(log);
    if (opt.log) {
      *opt.log << "epoch " << log.epoch << " loss " << log.train_loss << " val_macro_f1 " << log.val_macro_f1
               << " lr " << log.lr << '\n';
    }
    if (!state.best_val_macro_f1 || f1 > *state.best_val_macro_f1) {
      state.best_val_macro_f1 = f1;
      result.best = state;
      save("best", state);
    }
    save("last", state);
  }
  result.best.best_val_macro_f1 = state.best_val_macro_f1;
  result.last = std::move(state);
  if (opt.epochs == 0) save("last", result.last);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

inline metrics::MetricsReport evaluate_split(const ParamStore& params, const data::DatasetTable& table, Split split,
                                             const ModelConfig& cfg) {
  check_widths(table, cfg);
  const auto records = table.select(split);
  if (records.empty()) throw DataError("dataset has no '" + to_string(split) + "' records");
  return metrics::evaluate(predict_all(params, records, cfg));
}

enum class AblationSuite { Modality, Fusion, MMFA };

inline AblationSuite parse_suite(std::string_view s) {
  if (s == "modality") return AblationSuite::Modality;
  if (s == "fusion") return AblationSuite::Fusion;
  if (s == "mmfa") return AblationSuite::MMFA;
  throw Error("unknown ablation suite '" + std::string(s) + "'");
}

struct AblationConfig {
  std::string label;
  ModelConfig model;
};

inline std::vector<AblationConfig> ablation_configs(AblationSuite suite, const ModelConfig& base) {
  std::vector<AblationConfig> out;
  switch (suite) {
    case AblationSuite::Modality:
      for (const auto& m : all_modality_subsets()) {
        ModelConfig c = base;
        c.modalities = m;
        out.push_back({to_string(m), c});
      }
      break;
    case AblationSuite::Fusion:
      for (FusionVariant v : kFusionLadder) {
        ModelConfig c = base;
        c.fusion = v;
        c.modalities = {};
        out.push_back({to_string(v), c});
      }
      break;
    case AblationSuite::MMFA:
      for (MMFAVariant v : {MMFAVariant::SkipOnly, MMFAVariant::AttentionOnly, MMFAVariant::Full}) {
        ModelConfig c = base;
        c.mmfa = v;
        c.modalities = {};
        out.push_back({to_string(v), c});
      }
      break;
  }
  return out;
}

struct AblationRow {
  std::string suite;
  std::string config;
  std::uint64_t seed = 0;
  metrics::MetricsReport report;
};

// Every configuration of the suite is trained and evaluated once per seed;
// within a seed all configurations share the split, the init seed and the
// batch order. Evaluation uses the test split, or validation when absent.
inline std::vector<AblationRow> run_ablation(const data::DatasetTable& table, AblationSuite suite,
                                             const ModelConfig& base, TrainOptions opt, std::size_t seeds,
                                             std::uint64_t first_seed,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  static const char* suite_names[] = {"modality", "fusion", "mmfa"};
  std::vector<AblationRow> rows;
  const bool has_test = !table.select(Split::Test).empty();
  opt.out_dir.reset();
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = first_seed + s;
    const data::DatasetTable split = ensure_split(table, opt.train_fraction, seed);
    for (const auto& ac : ablation_configs(suite, base)) {
      ModelConfig cfg = ac.model;
      cfg.seed = seed;
      TrainOptions o = opt;
      o.seed = seed;
      TrainResult tr = train(split, cfg, o);
      AblationRow row{suite_names[static_cast<int>(suite)], ac.label, seed,
                      evaluate_split(tr.best.params, split, has_test ? Split::Test : Split::Val, cfg)};
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline const char* kAblationHeader =
    "suite,config,seed,auc,auc_sens80,average_precision,accuracy,sensitivity,specificity,dice,ppv,npv,"
    "macro_f1,top1_accuracy,ece";

inline std::string ablation_csv_row(const AblationRow& r) {
  const auto& m = r.report.macro;
  std::string s = r.suite + "," + r.config + "," + std::to_string(r.seed);
  for (double x : {m.auc, m.auc_sens80, m.average_precision, m.accuracy, m.sensitivity, m.specificity, m.dice, m.ppv,
                   m.npv, r.report.macro_f1, r.report.top1_accuracy, r.report.calibration.ece}) {
    s += "," + data::format_double(x);
  }
  return s;
}

}  // namespace jiadf
