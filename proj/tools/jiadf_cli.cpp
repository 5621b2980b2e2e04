// jiadf: data generation, training, evaluation, ablation suites and gradient
// checks from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "jiadf/gradcheck.hpp"
#include "jiadf/jiadf.hpp"

namespace fs = std::filesystem;
using namespace jiadf;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : Error {
  using Error::Error;
};

std::vector<std::size_t> parse_counts(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t pos = 0;
      long long v = std::stoll(cell, &pos);
      if (pos != cell.size() || v < 0) throw std::invalid_argument(cell);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("invalid --counts entry '" + cell + "'");
    }
  }
  return out;
}

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Widths and class count come from the dataset; a config document and then
// explicit flags override.
struct ModelFlags {
  std::string config_path;
  std::string variant;
  std::string mmfa_variant;
  std::string modalities;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config document (ModelConfig fields)");
    app->add_option("--variant", variant, "late-concat|jf-concat|jf-mmfa|ji-mmfa|ji-adf-noaux|ji-adf");
    app->add_option("--mmfa-variant", mmfa_variant, "skip-only|attention-only|full");
    app->add_option("--modalities", modalities, "subset of c,d,m");
    app->add_option("--seed", seed, "seed for initialization and shuffling");
  }

  ModelConfig build(const data::DatasetTable& table) const {
    ModelConfig c;
    c.clinical_dim = table.clinical_dim;
    c.dermoscopic_dim = table.dermoscopic_dim;
    c.metadata_raw_dim = table.metadata_dim;
    c.classes = std::max<std::size_t>(2, table.max_label() + 1);
    if (!config_path.empty()) c = config_from_json(read_json(config_path), c);
    if (!variant.empty()) c.fusion = parse_fusion_variant(variant);
    if (!mmfa_variant.empty()) c.mmfa = parse_mmfa_variant(mmfa_variant);
    if (!modalities.empty()) c.modalities = parse_modalities(modalities);
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  std::size_t epochs = 50;
  std::size_t batch = 16;
  double lr = 1e-4;
  double weight_decay = 1e-5;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "epochs to run (additional epochs when resuming)");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--lr", lr, "initial learning rate");
    app->add_option("--weight-decay", weight_decay, "decoupled weight decay");
  }

  TrainOptions options(std::uint64_t seed) const {
    TrainOptions o;
    o.epochs = epochs;
    o.batch_size = batch;
    o.lr = lr;
    o.weight_decay = weight_decay;
    o.seed = seed;
    return o;
  }
};

int cmd_gen_data(std::optional<std::size_t> classes, const std::string& counts, std::size_t per_class, std::size_t dim_c,
                 std::size_t dim_d, std::size_t dim_m, double snr, std::optional<double> snr_c,
                 std::optional<double> snr_d, std::optional<double> snr_m, bool complementary, double test_fraction,
                 std::uint64_t seed, const std::string& out) {
  data::DatasetSpec spec;
  spec.counts = counts.empty() ? std::vector<std::size_t>(classes.value_or(3), per_class) : parse_counts(counts);
  if (classes && spec.counts.size() != *classes) {
    throw UsageError("--counts lists " + std::to_string(spec.counts.size()) + " classes, --classes is " +
                     std::to_string(*classes));
  }
  spec.clinical_dim = dim_c;
  spec.dermoscopic_dim = dim_d;
  spec.metadata_dim = dim_m;
  spec.snr_clinical = snr_c.value_or(snr);
  spec.snr_dermoscopic = snr_d.value_or(snr);
  spec.snr_metadata = snr_m.value_or(snr);
  spec.complementary = complementary;
  spec.test_fraction = test_fraction;
  spec.seed = seed;
  const auto table = data::generate(spec);
  data::write_csv(out, table);
  std::size_t total = 0;
  for (std::size_t k = 0; k < spec.counts.size(); ++k) {
    std::cout << "class " << k << ": " << spec.counts[k] << '\n';
    total += spec.counts[k];
  }
  std::cout << "wrote " << total << " records to " << out << '\n';
  return kOk;
}

json epochs_json(const std::vector<EpochLog>& epochs) {
  json a = json::array();
  for (const auto& e : epochs) {
    a.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_macro_f1", e.val_macro_f1}, {"lr", e.lr}});
  }
  return a;
}

int cmd_train(const std::string& data_path, const ModelFlags& mf, const TrainFlags& tf, const std::string& out,
              const std::string& resume, const std::string& report_path) {
  std::vector<std::string> warnings;
  auto table = data::load_csv(data_path);
  ModelConfig cfg = mf.build(table);
  std::optional<Checkpoint> start;
  if (!resume.empty()) {
    start = load_checkpoint(resume);
    if (mf.config_path.empty() && mf.variant.empty() && mf.modalities.empty() && mf.mmfa_variant.empty()) {
      cfg = start->config;
    }
    if (!mf.seed) cfg.seed = start->config.seed;
  }
  table = ensure_split(std::move(table), 0.8, cfg.seed, &warnings);
  TrainOptions opt = tf.options(cfg.seed);
  opt.out_dir = fs::path(out);
  opt.log = &std::cerr;
  fs::create_directories(out);
  TrainResult tr = train(table, cfg, opt, std::move(start));
  warnings.insert(warnings.end(), tr.warnings.begin(), tr.warnings.end());

  json report = {{"config", to_json(cfg)},
                 {"seed", cfg.seed},
                 {"options",
                  {{"epochs", tf.epochs}, {"batch", tf.batch}, {"lr", tf.lr}, {"weight_decay", tf.weight_decay}}},
                 {"epochs", epochs_json(tr.epochs)},
                 {"best_val_macro_f1", tr.best.best_val_macro_f1 ? json(*tr.best.best_val_macro_f1) : json(nullptr)},
                 {"final_metrics", to_json(evaluate_split(tr.best.params, table, Split::Val, cfg))},
                 {"wall_clock_seconds", tr.seconds},
                 {"warnings", warnings}};
  const fs::path rp = report_path.empty() ? fs::path(out) / "report.json" : fs::path(report_path);
  write_json(rp, report);
  std::cout << "best val macro-F1 "
            << (tr.best.best_val_macro_f1 ? std::to_string(*tr.best.best_val_macro_f1) : std::string("n/a"))
            << "; checkpoints in " << out << "; report " << rp.string() << '\n';
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& split_name,
             const std::string& report_path, bool dump_posteriors) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  auto table = data::load_csv(data_path);
  check_widths(table, ck.config);
  const Split split = parse_split(split_name);
  // Same seeded partition the training run used.
  if (split == Split::Train || split == Split::Val) table = ensure_split(std::move(table), 0.8, ck.config.seed);
  const auto records = table.select(split);
  if (records.empty()) throw DataError("dataset has no '" + split_name + "' records");
  const auto preds = predict_all(ck.params, records, ck.config);
  json report = {{"split", split_name}, {"config", to_json(ck.config)}, {"metrics", to_json(metrics::evaluate(preds))}};
  if (dump_posteriors) {
    json rows = json::array();
    for (std::size_t i = 0; i < preds.size(); ++i) {
      rows.push_back({{"id", records[i].id},
                      {"label", preds[i].label},
                      {"predicted", preds[i].predicted},
                      {"posterior", preds[i].posterior}});
    }
    report["posteriors"] = rows;
  }
  if (report_path.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    write_json(report_path, report);
    std::cout << "macro AUC " << report["metrics"]["panel"]["AUC"]["Mean"].get<double>() << ", macro-F1 "
              << report["metrics"]["macro_f1"].get<double>() << "; report " << report_path << '\n';
  }
  return kOk;
}

int cmd_ablate(const std::string& data_path, const ModelFlags& mf, const TrainFlags& tf, const std::string& suite,
               std::size_t seeds, const std::string& out) {
  const auto table = data::load_csv(data_path);
  const ModelConfig base = mf.build(table);
  const AblationSuite s = parse_suite(suite);
  std::ofstream csv;
  std::ostream* os = &std::cout;
  if (!out.empty()) {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    csv.open(out, std::ios::binary);
    if (!csv) throw DataError("cannot write '" + out + "'");
    os = &csv;
  }
  *os << kAblationHeader << '\n';
  run_ablation(table, s, base, tf.options(base.seed), seeds, base.seed, [&](const AblationRow& row) {
    *os << ablation_csv_row(row) << '\n';
    os->flush();
    std::cerr << row.config << " seed " << row.seed << ": macro AUC " << row.report.macro.auc << '\n';
  });
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, double tol, double h, const std::string& variant) {
  ModelConfig cfg = tiny_config();
  if (!variant.empty()) cfg.fusion = parse_fusion_variant(variant);
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckResult r = gradient_check(cfg, seed, h);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& [group, err] : r.worst_by_group) std::cout << "  " << group << ": " << err << '\n';
  std::cout << "worst relative error " << r.worst << " (" << r.worst_param << "), tolerance " << tol << ", "
            << secs << " s\n";
  const bool ok = r.worst < tol;
  std::cout << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint-individual multimodal classifier with adaptive decision fusion"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic trimodal dataset CSV");
  std::optional<std::size_t> classes;
  std::size_t per_class = 100, dim_c = 16, dim_d = 16, dim_m = 16;
  std::string counts, out;
  double snr = 3.0, test_fraction = 0.0;
  std::optional<double> snr_c, snr_d, snr_m;
  bool complementary = false;
  std::uint64_t seed = 0;
  gen->add_option("--classes", classes, "number of classes");
  gen->add_option("--counts", counts, "comma-separated per-class counts");
  gen->add_option("--per-class", per_class, "samples per class when --counts is absent");
  gen->add_option("--clinical-dim", dim_c);
  gen->add_option("--dermoscopic-dim", dim_d);
  gen->add_option("--metadata-dim", dim_m);
  gen->add_option("--snr", snr, "signal-to-noise for every modality");
  gen->add_option("--snr-c", snr_c);
  gen->add_option("--snr-d", snr_d);
  gen->add_option("--snr-m", snr_m);
  gen->add_flag("--complementary", complementary, "image-only and metadata-only separable class pairs");
  gen->add_option("--test-fraction", test_fraction, "per-class fraction tagged as test");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out, "output CSV")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model and write checkpoints");
  std::string data_path, resume, report_path;
  ModelFlags train_model;
  TrainFlags train_flags;
  std::string train_out;
  tr->add_option("--data", data_path, "dataset CSV")->required();
  tr->add_option("--out", train_out, "run directory (best/, last/, report.json)")->required();
  tr->add_option("--resume", resume, "checkpoint directory to continue from");
  tr->add_option("--report", report_path, "run report path (default <out>/report.json)");
  train_model.add(tr);
  train_flags.add(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt, eval_data, eval_split = "test", eval_report;
  bool dump = false;
  ev->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  ev->add_option("--data", eval_data, "dataset CSV")->required();
  ev->add_option("--split", eval_split, "train|val|test|unsplit");
  ev->add_option("--report", eval_report, "report path (stdout when absent)");
  ev->add_option("--out", eval_report, "alias of --report");
  ev->add_flag("--dump-posteriors", dump, "include per-sample posteriors");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run an ablation suite");
  std::string ab_data, suite, ab_out;
  std::size_t seeds = 3;
  ModelFlags ab_model;
  TrainFlags ab_flags;
  ab->add_option("--data", ab_data, "dataset CSV")->required();
  ab->add_option("--suite", suite, "modality|fusion|mmfa")->required();
  ab->add_option("--seeds", seeds, "number of seeds");
  ab->add_option("--out", ab_out, "results CSV (stdout when absent)");
  ab_model.add(ab);
  ab_flags.add(ab);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "compare backward() against finite differences");
  std::uint64_t gc_seed = 0;
  double tol = 1e-5, h = 1e-6;
  std::string gc_variant;
  gc->add_option("--seed", gc_seed);
  gc->add_option("--tol", tol);
  gc->add_option("--step", h, "finite-difference step");
  gc->add_option("--variant", gc_variant);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      return cmd_gen_data(classes, counts, per_class, dim_c, dim_d, dim_m, snr, snr_c, snr_d, snr_m, complementary,
                          test_fraction, seed, out);
    }
    if (*tr) return cmd_train(data_path, train_model, train_flags, train_out, resume, report_path);
    if (*ev) return cmd_eval(ckpt, eval_data, eval_split, eval_report, dump);
    if (*ab) return cmd_ablate(ab_data, ab_model, ab_flags, suite, seeds, ab_out);
    if (*gc) return cmd_gradcheck(gc_seed, tol, h, gc_variant);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
