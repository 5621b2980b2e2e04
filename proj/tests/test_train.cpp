#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "jiadf/jiadf.hpp"
#include "oracle.hpp"

using namespace jiadf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int n = 0;
    path = fs::temp_directory_path() /
           ("jiadf_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" + std::to_string(n++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ModelConfig small_config() {
  ModelConfig c;
  c.clinical_dim = c.dermoscopic_dim = c.metadata_raw_dim = 6;
  c.encoder_hidden = 12;
  c.image_dim = c.metadata_dim = 10;
  c.joint_dim = 16;
  c.heads = 2;
  c.head_dim = 4;
  c.gate_hidden = 8;
  c.classes = 3;
  c.seed = 4;
  return c;
}

data::DatasetTable small_table(double snr = 5.0, std::size_t per_class = 40) {
  data::DatasetSpec s;
  s.counts.assign(3, per_class);
  s.clinical_dim = s.dermoscopic_dim = s.metadata_dim = 6;
  s.snr_clinical = s.snr_dermoscopic = s.snr_metadata = snr;
  s.seed = 21;
  return data::split_train_val(data::generate(s), 0.8, 1);
}

Checkpoint trained_state() {
  TrainOptions o;
  o.epochs = 2;
  o.lr = 1e-3;
  return train(small_table(), small_config(), o).last;
}

std::vector<double> losses(const TrainResult& r) {
  std::vector<double> out;
  for (const auto& e : r.epochs) out.push_back(e.train_loss);
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  const Checkpoint ck = trained_state();
  save_checkpoint(dir.path / "ck", ck);
  const Checkpoint back = load_checkpoint(dir.path / "ck");
  ASSERT_EQ(back.params.size(), ck.params.size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    EXPECT_EQ(back.params.entry(i).name, ck.params.entry(i).name);
    EXPECT_EQ(back.params.entry(i).value, ck.params.entry(i).value);
    EXPECT_EQ(back.optimizer.first_moments()[i], ck.optimizer.first_moments()[i]);
    EXPECT_EQ(back.optimizer.second_moments()[i], ck.optimizer.second_moments()[i]);
  }
  EXPECT_EQ(back.optimizer.steps(), ck.optimizer.steps());
  EXPECT_EQ(back.scheduler.lr(), ck.scheduler.lr());
  EXPECT_EQ(back.scheduler.best(), ck.scheduler.best());
  EXPECT_EQ(back.scheduler.bad_epochs(), ck.scheduler.bad_epochs());
  EXPECT_EQ(back.best_val_macro_f1, ck.best_val_macro_f1);
  EXPECT_EQ(back.epoch, ck.epoch);
  EXPECT_EQ(to_json(back.config), to_json(ck.config));

  std::mt19937_64 rng(3);
  for (int t = 0; t < 5; ++t) {
    const Record r = oracle::random_record(ck.config, rng);
    EXPECT_EQ(forward(back.params, r, back.config).p_final, forward(ck.params, r, ck.config).p_final);
  }
}

TEST(Checkpoint, TruncatedBlobIsReported) {
  TempDir dir;
  save_checkpoint(dir.path / "ck", trained_state());
  const fs::path blob = dir.path / "ck" / "blob.bin";
  fs::resize_file(blob, fs::file_size(blob) - 1);
  try {
    load_checkpoint(dir.path / "ck");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, VersionAndMissingFiles) {
  TempDir dir;
  save_checkpoint(dir.path / "ck", trained_state());
  const fs::path man = dir.path / "ck" / "manifest.json";
  std::ifstream is(man);
  json j = json::parse(is);
  is.close();
  j["format_version"] = 99;
  std::ofstream(man) << j.dump();
  EXPECT_THROW(load_checkpoint(dir.path / "ck"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir.path / "nowhere"), CheckpointError);
}

TEST(Checkpoint, WidthMismatchNamesParameter) {
  const Checkpoint ck = trained_state();
  ModelConfig other = ck.config;
  other.joint_dim = 20;
  try {
    require_compatible(ck.params, init_params(other));
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("width mismatch for parameter 'mmfa.Wo'"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, OverwriteKeepsOnlyNewState) {
  TempDir dir;
  Checkpoint ck = trained_state();
  save_checkpoint(dir.path / "ck", ck);
  ck.epoch = 77;
  save_checkpoint(dir.path / "ck", ck);
  EXPECT_EQ(load_checkpoint(dir.path / "ck").epoch, 77u);
  EXPECT_FALSE(fs::exists(dir.path / "ck.tmp"));
  EXPECT_FALSE(fs::exists(dir.path / "ck.old"));
}

TEST(Train, IdenticalSeedsGiveIdenticalLosses) {
  TrainOptions o;
  o.epochs = 3;
  o.lr = 1e-3;
  o.seed = 5;
  const auto a = train(small_table(), small_config(), o), b = train(small_table(), small_config(), o);
  EXPECT_EQ(losses(a), losses(b));
  o.seed = 6;
  EXPECT_NE(losses(a), losses(train(small_table(), small_config(), o)));
}

TEST(Train, ResumeEqualsUninterrupted) {
  TempDir dir;
  TrainOptions o;
  o.lr = 1e-3;
  o.seed = 2;
  o.epochs = 6;
  const auto straight = train(small_table(), small_config(), o);

  o.epochs = 3;
  o.out_dir = dir.path;
  const auto first = train(small_table(), small_config(), o);
  const auto resumed = train(small_table(), small_config(), o, load_checkpoint(dir.path / "last"));
  std::vector<double> joined = losses(first);
  const auto tail = losses(resumed);
  joined.insert(joined.end(), tail.begin(), tail.end());
  EXPECT_EQ(joined, losses(straight));
  ASSERT_EQ(resumed.epochs.front().epoch, 4u);
  for (std::size_t i = 0; i < straight.last.params.size(); ++i)
    EXPECT_EQ(resumed.last.params.entry(i).value, straight.last.params.entry(i).value);
  EXPECT_EQ(resumed.best.best_val_macro_f1, straight.best.best_val_macro_f1);
}

TEST(Train, ZeroEpochsKeepsInitialParameters) {
  TempDir dir;
  TrainOptions o;
  o.epochs = 0;
  o.out_dir = dir.path;
  const auto r = train(small_table(), small_config(), o);
  EXPECT_TRUE(r.epochs.empty());
  const auto ck = load_checkpoint(dir.path / "best");
  const ParamStore init = init_params(small_config());
  for (std::size_t i = 0; i < init.size(); ++i) EXPECT_EQ(ck.params.entry(i).value, init.entry(i).value);
}

TEST(Train, BestCheckpointTracksStrictImprovement) {
  TempDir dir;
  TrainOptions o;
  o.epochs = 8;
  o.lr = 1e-3;
  o.out_dir = dir.path;
  const auto r = train(small_table(), small_config(), o);
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& e : r.epochs)
    if (e.val_macro_f1 > best) best = e.val_macro_f1, best_epoch = e.epoch;
  EXPECT_EQ(*r.best.best_val_macro_f1, best);
  EXPECT_EQ(r.best.epoch, best_epoch);
  EXPECT_EQ(load_checkpoint(dir.path / "best").epoch, best_epoch);
  EXPECT_EQ(load_checkpoint(dir.path / "last").epoch, 8u);
}

TEST(Train, SeparableDataReachesHighValidationF1) {
  TrainOptions o;
  o.seed = 1;
  ModelConfig c = small_config();
  const auto table = small_table(5.0, 100);
  const auto r = train(table, c, o);
  EXPECT_GE(*r.best.best_val_macro_f1, 0.95);
}

TEST(Train, MemorizedTrainingSplitIsClassifiedCorrectly) {
  TrainOptions o;
  o.epochs = 30;
  o.lr = 3e-3;
  const auto table = small_table(3.0, 20);
  const auto r = train(table, small_config(), o);
  EXPECT_GE(evaluate_split(r.last.params, table, Split::Train, small_config()).top1_accuracy, 0.99);
}

TEST(Train, WidthMismatchIsADataError) {
  ModelConfig c = small_config();
  c.metadata_raw_dim = 7;
  EXPECT_THROW(train(small_table(), c, TrainOptions{}), DataError);
}

TEST(Ablation, SuitesEnumerateTheirConfigurations) {
  const ModelConfig base = small_config();
  EXPECT_EQ(ablation_configs(AblationSuite::Modality, base).size(), 7u);
  EXPECT_EQ(ablation_configs(AblationSuite::Fusion, base).size(), 6u);
  const auto mm = ablation_configs(AblationSuite::MMFA, base);
  ASSERT_EQ(mm.size(), 3u);
  EXPECT_EQ(mm[0].label, "skip-only");
  TrainOptions o;
  o.epochs = 1;
  const auto rows = run_ablation(small_table(), AblationSuite::MMFA, base, o, 2, 0);
  EXPECT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[3].seed, 1u);
}

TEST(Ablation, ZeroedGateMatchesFixedAverage) {
  // Trained with identical auxiliary weights, a gate whose output layer stays
  // at zero reproduces the fixed-average variant's posteriors exactly.
  const auto table = small_table();
  ModelConfig avg = small_config();
  avg.fusion = FusionVariant::JIMMFA;
  TrainOptions o;
  o.epochs = 2;
  o.lr = 1e-3;
  const auto r = train(table, avg, o);
  ParamStore p = r.best.params;
  p.value(heads::kGateW2).fill(0.0);
  p.value(heads::kGateB2).fill(0.0);
  ModelConfig gated = avg;
  gated.fusion = FusionVariant::JIADF;
  const auto a = evaluate_split(p, table, Split::Val, avg), b = evaluate_split(p, table, Split::Val, gated);
  EXPECT_EQ(to_json(a), to_json(b));
}
