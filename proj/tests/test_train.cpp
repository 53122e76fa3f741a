#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "chemimg/checkpoint.hpp"
#include "chemimg/encode.hpp"
#include "chemimg/experiment.hpp"
#include "chemimg/synth.hpp"
#include "chemimg/train.hpp"

using namespace chemimg;

namespace {

Dataset make_dataset(const std::vector<std::pair<std::string, std::optional<double>>>& rows) {
  Dataset ds;
  ds.tasks = {"y"};
  for (const auto& [smiles, label] : rows) {
    LabeledRecord r;
    r.smiles = smiles;
    r.labels = {label};
    r.record_id = ds.records.size();
    ds.records.push_back(r);
  }
  return ds;
}

ChannelSchema schema_of(SchemaKind k, std::uint64_t seed = 7) {
  ChannelSchema s;
  s.kind = k;
  s.noise_seed = seed;
  s.scramble_seed = seed;
  return s;
}

std::size_t count_value(const ChemImage& img, float v) {
  return static_cast<std::size_t>(std::count(img.data.begin(), img.data.end(), v));
}

nn::NetworkConfig small_net(std::size_t channels = 1, std::size_t filters = 4) {
  nn::NetworkConfig c;
  c.depth = 1;
  c.filters = filters;
  c.input_channels = channels;
  c.tasks = 1;
  c.seed = 3;
  return c;
}

bool same_params(const nn::Network<float>& a, const nn::Network<float>& b) {
  if (a.params().size() != b.params().size()) return false;
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (a.params()[i].data != b.params()[i].data) return false;
  return a.input_mean() == b.input_mean() && a.input_std() == b.input_std();
}

}  // namespace

TEST(Encoder, SkipsUnparsableAndKeepsOrder) {
  const auto ds = make_dataset({{"CCO", 1.0}, {"C(", 0.0}, {"c1ccccc1", 0.0}, {"CCN", 1.0}});
  const Encoder std_enc(ds, schema_of(SchemaKind::Std), 0, 2);
  EXPECT_EQ(std_enc.ids(), (std::vector<std::size_t>{0, 2, 3}));
  ASSERT_EQ(std_enc.skipped().size(), 1u);
  EXPECT_EQ(std_enc.skipped()[0].record_id, 1u);
  EXPECT_FALSE(std_enc.skipped()[0].reason.empty());
  EXPECT_EQ(std_enc.channels(), 1u);
  EXPECT_EQ(std_enc.render_all().size(), 3u);

  const Encoder eng(ds, schema_of(SchemaKind::EngA), 0, 1);
  EXPECT_EQ(eng.channels(), 4u);
  EXPECT_EQ(eng.render(0).channels, 4u);
  EXPECT_EQ(eng.ids(), std_enc.ids());
}

TEST(Encoder, EverySchemaKeepsTheSameRecords) {
  const auto ds = make_dataset({{"CCO", 1.0}, {"C1CC", 0.0}, {"c1ccccc1O", 0.0}, {"CC(=O)O", 1.0}, {"Xx", 1.0}});
  const Encoder ref(ds, schema_of(SchemaKind::Std), 0, 1);
  for (auto k : kAllSchemas) {
    const Encoder enc(ds, schema_of(k), 0, 1);
    EXPECT_EQ(enc.ids(), ref.ids()) << schema_name(k);
  }
}

TEST(Encoder, RenderIsDeterministicAndMatchesRasterizer) {
  const auto ds = make_dataset({{"CC(=O)Oc1ccccc1C(=O)O", 1.0}});
  const Encoder enc(ds, schema_of(SchemaKind::Std), 0, 1);
  const Molecule mol = parse_smiles(ds.records[0].smiles);
  const auto expect = rasterize(mol, center_and_rotate(generate_coords(mol), 0.0), SchemaKind::Std);
  EXPECT_EQ(enc.render(0), expect);
  EXPECT_EQ(enc.render(0, 33.0), enc.render(0, 33.0));
  EXPECT_THROW(enc.render(5), ConfigError);
}

TEST(Encoder, RotatedBenzeneKeepsSixCarbonPixels) {
  const auto ds = make_dataset({{"c1ccccc1", 1.0}});
  const Encoder enc(ds, schema_of(SchemaKind::Std), 0, 1);
  for (double angle : {0.0, 17.0, 30.0, 45.0, 90.0, 137.5, 270.0}) {
    bool fell_back = true;
    const auto img = enc.render(0, angle, &fell_back);
    EXPECT_FALSE(fell_back) << angle;
    EXPECT_EQ(count_value(img, 6.0f), 6u) << angle;
  }
}

TEST(Encoder, NoiseImagesArePerRecordAndSeeded) {
  const auto ds = make_dataset({{"CCO", 1.0}, {"CCN", 0.0}});
  const Encoder a(ds, schema_of(SchemaKind::Noise, 1), 0, 1);
  const Encoder b(ds, schema_of(SchemaKind::Noise, 1), 0, 1);
  const Encoder c(ds, schema_of(SchemaKind::Noise, 2), 0, 1);
  EXPECT_EQ(a.render(0), b.render(0));
  EXPECT_NE(a.render(0), a.render(1));
  EXPECT_NE(a.render(0), c.render(0));
  EXPECT_EQ(count_value(a.render(0), 1.0f), 128u);
}

TEST(Encoder, TruthNeedsLabel) {
  const auto ds = make_dataset({{"CCO", 1.0}, {"CCN", std::nullopt}, {"CCC", 0.0}});
  const Encoder enc(ds, schema_of(SchemaKind::Truth), 0, 1);
  EXPECT_EQ(enc.ids(), (std::vector<std::size_t>{0, 2}));
  EXPECT_GT(count_value(enc.render(0), 1.0f), 0u);
  EXPECT_EQ(count_value(enc.render(2), 0.0f), enc.render(2).data.size());

  Dataset unlabeled = ds;
  unlabeled.tasks.clear();
  for (auto& r : unlabeled.records) r.labels.clear();
  EXPECT_THROW(Encoder(unlabeled, schema_of(SchemaKind::Truth), 0, 1), ConfigError);
}

TEST(Checkpoint, RoundTripIsExact) {
  nn::Network<float> net(small_net(4));
  net.set_standardization({0.5f, 1.0f, -0.1f, 2.0f}, {1.0f, 0.25f, 0.3f, 1.5f});
  std::stringstream buf;
  write_checkpoint_stream(buf, net);
  const auto back = read_checkpoint_stream(buf);
  EXPECT_TRUE(same_params(net, back));
  EXPECT_EQ(nn::to_json(back.config()), nn::to_json(net.config()));

  std::vector<float> x(4 * 80 * 80);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = float(i % 7) * 0.25f;
  nn::Workspace<float> w1, w2;
  EXPECT_EQ(net.forward(x.data(), w1), back.forward(x.data(), w2));
}

TEST(Checkpoint, RejectsCorruption) {
  const nn::Network<float> net(small_net());
  std::stringstream buf;
  write_checkpoint_stream(buf, net);
  const std::string bytes = buf.str();

  auto load = [](const std::string& s) {
    std::stringstream in(s);
    return read_checkpoint_stream(in);
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(load(bad_magic), FormatError);
  EXPECT_THROW(load(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(load(bytes + "junk"), FormatError);
  std::string bad_json = bytes;
  bad_json[12] = '!';
  EXPECT_THROW(load(bad_json), FormatError);
}

TEST(Train, HistoryCsvFormat) {
  std::vector<HistoryRow> rows(2);
  rows[0] = {1, 0.5, 0.25, 0.75};
  rows[1] = {2, 0.125, std::nullopt, std::nullopt};
  EXPECT_EQ(history_csv(rows), "epoch,train_loss,val_loss,val_metric\n1,0.5,0.25,0.75\n2,0.125,,\n");
}

TEST(Train, ZeroEpochsReturnsInitialWeights) {
  const auto ds = make_dataset({{"CCO", 1.0}, {"CCN", 0.0}});
  const Encoder enc(ds, schema_of(SchemaKind::Std), 0, 1);
  const nn::Network<float> net(small_net());
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = train(net, enc, ds, {0, 1}, {}, cfg);
  EXPECT_TRUE(r.history.empty());
  EXPECT_TRUE(same_params(r.model, net));
}

TEST(Train, RejectsBadSetup) {
  const auto ds = make_dataset({{"CCO", 1.0}, {"CCN", 0.0}});
  const Encoder enc(ds, schema_of(SchemaKind::EngA), 0, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(nn::Network<float>(small_net(1)), enc, ds, {0, 1}, {}, cfg), ConfigError);
  cfg.patience = 0;
  EXPECT_THROW(train(nn::Network<float>(small_net(4)), enc, ds, {0, 1}, {}, cfg), ConfigError);
}

// Validation records repeat the training molecules with flipped labels, so
// every step that fits the training set makes validation loss worse.
TEST(Train, PatienceOneStopsAfterFirstWorseEpoch) {
  const auto ds = make_dataset({{"CCO", 1.0},
                                {"c1ccccc1", 0.0},
                                {"CC(C)Cl", 1.0},
                                {"C1CCCCC1", 0.0},
                                {"CCO", 0.0},
                                {"c1ccccc1", 1.0},
                                {"CC(C)Cl", 0.0},
                                {"C1CCCCC1", 1.0}});
  const Encoder enc(ds, schema_of(SchemaKind::Std), 0, 1);
  const nn::Network<float> net(small_net());
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.patience = 1;
  cfg.batch = 4;
  cfg.lr = 1e-2;
  cfg.rotate = false;
  const std::vector<std::size_t> tr{0, 1, 2, 3}, va{4, 5, 6, 7};
  const auto r = train(net, enc, ds, tr, va, cfg);
  ASSERT_EQ(r.history.size(), 2u);
  ASSERT_GT(*r.history[1].val_loss, *r.history[0].val_loss);
  EXPECT_EQ(r.best_epoch, 1u);

  cfg.epochs = 1;
  const auto one = train(net, enc, ds, tr, va, cfg);
  EXPECT_TRUE(same_params(r.model, one.model));
}

TEST(Train, KeepsBestValidationEpoch) {
  const auto ds = random_label_set(24, 5);
  const Encoder enc(ds, schema_of(SchemaKind::Std), 0, 1);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.patience = 6;
  cfg.batch = 8;
  std::vector<std::size_t> tr, va;
  for (auto id : ds.ids()) (id % 3 == 0 ? va : tr).push_back(id);
  const auto r = train(nn::Network<float>(small_net()), enc, ds, tr, va, cfg);
  ASSERT_EQ(r.history.size(), 6u);
  std::size_t argmin = 0;
  for (std::size_t i = 1; i < r.history.size(); ++i)
    if (*r.history[i].val_loss < *r.history[argmin].val_loss) argmin = i;
  EXPECT_EQ(r.best_epoch, argmin + 1);

  const auto preds = predict(r.model, enc, va);
  EXPECT_NEAR(*mean_loss(nn::Head::sigmoid, ds, va, preds), *r.history[argmin].val_loss, 1e-12);
}

TEST(Train, HistoryIsDeterministicAcrossThreadCounts) {
  const auto ds = random_label_set(20, 9);
  const Encoder enc(ds, schema_of(SchemaKind::RedB), 0, 1);
  std::vector<std::size_t> tr, va;
  for (auto id : ds.ids()) (id < 15 ? tr : va).push_back(id);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 6;
  cfg.seed = 4;
  const nn::Network<float> net(small_net());
  const auto a = train(net, enc, ds, tr, va, cfg);
  const auto b = train(net, enc, ds, tr, va, cfg);
  cfg.threads = 3;
  const auto c = train(net, enc, ds, tr, va, cfg);
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
  EXPECT_EQ(history_csv(a.history), history_csv(c.history));
  EXPECT_TRUE(same_params(a.model, c.model));
}

TEST(Train, FullyMaskedBatchesAreCountedNotFatal) {
  Dataset ds;
  ds.tasks = {"a", "b"};
  for (int i = 0; i < 4; ++i) {
    LabeledRecord r;
    r.smiles = i % 2 ? "CCO" : "CCN";
    r.record_id = std::size_t(i);
    r.labels = {std::nullopt, i < 2 ? std::optional<double>(double(i % 2)) : std::nullopt};
    ds.records.push_back(r);
  }
  const Encoder enc(ds, schema_of(SchemaKind::Std), 0, 1);
  auto cfg_net = small_net();
  cfg_net.tasks = 2;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 1;
  const auto r = train(nn::Network<float>(cfg_net), enc, ds, {0, 1, 2, 3}, {}, cfg);
  EXPECT_EQ(r.masked_batches, 4u);
  EXPECT_EQ(r.history.size(), 2u);
}

TEST(Train, StandardizationDefaultsOnForEngineeredSchemas) {
  const auto ds = make_dataset({{"CCO", 1.0}, {"CCN", 0.0}, {"CCCl", 1.0}});
  TrainConfig cfg;
  cfg.epochs = 1;
  const Encoder eng(ds, schema_of(SchemaKind::EngB), 0, 1);
  const auto r = train(nn::Network<float>(small_net(4)), eng, ds, {0, 1, 2}, {}, cfg);
  const auto [m, s] = channel_stats(eng, {0, 1, 2});
  EXPECT_EQ(r.model.input_mean(), m);
  EXPECT_EQ(r.model.input_std(), s);
  EXPECT_GT(m[0], 0.0f);

  const Encoder plain(ds, schema_of(SchemaKind::Std), 0, 1);
  const auto p = train(nn::Network<float>(small_net(1)), plain, ds, {0, 1, 2}, {}, cfg);
  EXPECT_EQ(p.model.input_mean(), std::vector<float>{0.0f});
  EXPECT_EQ(p.model.input_std(), std::vector<float>{1.0f});
}

TEST(Train, LossFallsOnTinySet) {
  const auto ds = make_dataset({{"CCO", 1.0}, {"c1ccccc1", 0.0}, {"CCCl", 1.0}, {"C1CCCCC1", 0.0}});
  const Encoder enc(ds, schema_of(SchemaKind::RedB), 0, 1);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch = 4;
  cfg.rotate = false;
  const auto r = train(nn::Network<float>(small_net()), enc, ds, {0, 1, 2, 3}, {}, cfg);
  EXPECT_LT(r.history.back().train_loss, 0.5 * r.history.front().train_loss);
}

TEST(Synth, RandomLabelSetIsDistinctRenderableAndSeeded) {
  const auto a = random_label_set(60, 1);
  const auto b = random_label_set(60, 1);
  ASSERT_EQ(a.size(), 60u);
  std::set<std::string> seen;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.records[i].smiles, b.records[i].smiles);
    EXPECT_TRUE(seen.insert(a.records[i].smiles).second);
    EXPECT_TRUE(detail::renderable(a.records[i].smiles)) << a.records[i].smiles;
    positives += *a.records[i].labels[0] == 1.0;
  }
  EXPECT_GT(positives, 15u);
  EXPECT_LT(positives, 45u);
  EXPECT_NE(random_label_set(60, 2).records[0].smiles + random_label_set(60, 2).records[1].smiles,
            a.records[0].smiles + a.records[1].smiles);
}

TEST(Synth, FunctionalGroupLabelsFollowTheGroup) {
  const auto ds = functional_group_set(80, 4, 0.5);
  std::size_t decoys = 0;
  for (const auto& r : ds.records) {
    const bool acid = r.smiles.size() > 10 && r.smiles.substr(r.smiles.size() - 10) == "S(=O)(=O)O";
    EXPECT_EQ(*r.labels[0] == 1.0, acid) << r.smiles;
    if (r.smiles.find("C(C)(C)C") != std::string::npos) ++decoys;
    EXPECT_TRUE(detail::renderable(r.smiles));
  }
  EXPECT_GT(decoys, 0u);
  for (const auto& r : functional_group_set(40, 4, 0.0).records)
    EXPECT_EQ(r.smiles.find("C(C)(C)C"), std::string::npos);
  EXPECT_THROW(functional_group_set(10, 1, 1.5), ConfigError);
}

TEST(Synth, CsvRoundTrip) {
  auto ds = random_label_set(12, 3);
  ds.records[2].labels[0].reset();
  std::stringstream buf;
  write_csv(ds, buf);
  const auto back = load_csv(buf);
  ASSERT_EQ(back.size(), 11u);
  EXPECT_EQ(back.unlabeled_rows, std::vector<std::size_t>{2});
  EXPECT_EQ(back.by_id(5).smiles, ds.records[5].smiles);
  EXPECT_EQ(back.by_id(5).labels, ds.records[5].labels);
}

TEST(Experiment, ConfigJsonRoundTrip) {
  ExperimentConfig c;
  c.csv = "/data/x.csv";
  c.label_kind = LabelKind::regression;
  c.schema = SchemaKind::EngC;
  c.seed = 99;
  c.depth = 3;
  c.filters = 16;
  c.rotate = false;
  c.standardize = false;
  c.oversample_task = "";
  c.fold = 2;
  const auto back = experiment_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.arch(), "T3_F16");
  EXPECT_EQ(back.fold, std::optional<std::size_t>(2));

  auto j = to_json(c);
  j.erase("seed");
  EXPECT_THROW(experiment_from_json(j), FormatError);
  j = to_json(c);
  j["schema"] = "rainbow";
  EXPECT_THROW(experiment_from_json(j), ConfigError);
}

TEST(Experiment, SeedsAreDerivedPerStream) {
  ExperimentConfig c;
  c.seed = 5;
  std::set<std::uint64_t> seeds{c.network(1).seed, c.training(1).seed, c.channel_schema().noise_seed,
                                c.channel_schema().scramble_seed};
  EXPECT_EQ(seeds.size(), 4u);
}

TEST(Experiment, SelectedFolds) {
  ExperimentConfig c;
  c.folds = 3;
  EXPECT_EQ(selected_folds(c), (std::vector<std::size_t>{0, 1, 2}));
  c.fold = 1;
  EXPECT_EQ(selected_folds(c), std::vector<std::size_t>{1});
  c.fold = 3;
  EXPECT_THROW(selected_folds(c), ConfigError);
}

TEST(Experiment, OversamplingFollowsConfig) {
  auto ds = make_dataset({});
  for (int i = 0; i < 40; ++i) {
    LabeledRecord r;
    r.smiles = "C";
    r.labels = {i < 8 ? 1.0 : 0.0};
    r.record_id = std::size_t(i);
    ds.records.push_back(r);
  }
  Fold f;
  f.train_ids = ds.ids();
  ExperimentConfig c;
  EXPECT_EQ(fold_training_ids(ds, f, c).size(), 40u + 8u * 3u);
  c.oversample_task = "";
  EXPECT_EQ(fold_training_ids(ds, f, c).size(), 40u);
  c.oversample_task = "nope";
  EXPECT_THROW(fold_training_ids(ds, f, c), ConfigError);
  c.oversample_task.reset();
  c.label_kind = LabelKind::regression;
  EXPECT_EQ(fold_training_ids(ds, f, c).size(), 40u);
}

TEST(Experiment, ControlsRejectUnusableInput) {
  Dataset empty;
  empty.tasks = {"label"};
  EXPECT_THROW(run_controls(empty, ExperimentConfig{}), TooFewRecords);
  ExperimentConfig reg;
  reg.label_kind = LabelKind::regression;
  EXPECT_THROW(run_controls(random_label_set(10, 1), reg), ConfigError);
}
