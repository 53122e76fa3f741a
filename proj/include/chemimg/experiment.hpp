#pragma once

#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "chemimg/checkpoint.hpp"
#include "chemimg/dataset.hpp"
#include "chemimg/encode.hpp"
#include "chemimg/metrics.hpp"
#include "chemimg/nn.hpp"
#include "chemimg/random.hpp"
#include "chemimg/train.hpp"
#include "json.hpp"

namespace chemimg {

/// Everything needed to replay a run. Derived seeds (network init, batch
/// order, noise, scramble) all come from `seed`.
struct ExperimentConfig {
  std::string csv;
  LabelKind label_kind = LabelKind::binary;
  SchemaKind schema = SchemaKind::Std;
  double noise_density = 0.02;
  double test_fraction = 0.1;
  std::size_t folds = 5;
  bool stratify = false;
  std::uint64_t seed = 0;
  std::size_t depth = 1;
  std::size_t filters = 8;
  double residual_scale = 1.0;
  std::size_t epochs = 100;
  std::size_t patience = 25;
  std::size_t batch = 32;
  double lr = 1e-3;
  bool rotate = true;
  std::optional<bool> standardize;
  /// Oversampling reference column; empty string disables, unset means the
  /// first task for binary data.
  std::optional<std::string> oversample_task;
  /// Single fold to train; unset trains every fold.
  std::optional<std::size_t> fold;

  std::string arch() const { return "T" + std::to_string(depth) + "_F" + std::to_string(filters); }

  ChannelSchema channel_schema() const {
    ChannelSchema s;
    s.kind = schema;
    s.noise_density = noise_density;
    s.noise_seed = derive_seed(seed, 3);
    s.scramble_seed = derive_seed(seed, 4);
    return s;
  }

  nn::NetworkConfig network(std::size_t tasks) const {
    nn::NetworkConfig n;
    n.depth = depth;
    n.filters = filters;
    n.input_channels = schema_channels(schema);
    n.tasks = tasks;
    n.head = label_kind == LabelKind::binary ? nn::Head::sigmoid : nn::Head::linear;
    n.residual_scale = residual_scale;
    n.seed = derive_seed(seed, 1);
    return n;
  }

  TrainConfig training(std::size_t threads) const {
    TrainConfig t;
    t.epochs = epochs;
    t.patience = patience;
    t.batch = batch;
    t.lr = lr;
    t.rotate = rotate;
    t.seed = derive_seed(seed, 2);
    t.standardize = standardize;
    t.threads = threads;
    return t;
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j = {{"csv", c.csv},
                      {"labels", c.label_kind == LabelKind::binary ? "binary" : "regression"},
                      {"schema", std::string(schema_name(c.schema))},
                      {"noise_density", c.noise_density},
                      {"test_fraction", c.test_fraction},
                      {"folds", c.folds},
                      {"stratify", c.stratify},
                      {"seed", c.seed},
                      {"arch", c.arch()},
                      {"residual_scale", c.residual_scale},
                      {"epochs", c.epochs},
                      {"patience", c.patience},
                      {"batch", c.batch},
                      {"lr", c.lr},
                      {"rotate", c.rotate}};
  j["standardize"] = c.standardize ? nlohmann::json(*c.standardize) : nlohmann::json(nullptr);
  j["oversample_task"] = c.oversample_task ? nlohmann::json(*c.oversample_task) : nlohmann::json(nullptr);
  j["fold"] = c.fold ? nlohmann::json(*c.fold) : nlohmann::json(nullptr);
  return j;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c;
    c.csv = j.at("csv").get<std::string>();
    const auto labels = j.at("labels").get<std::string>();
    if (labels != "binary" && labels != "regression") throw ConfigError("labels must be binary or regression");
    c.label_kind = labels == "binary" ? LabelKind::binary : LabelKind::regression;
    const auto schema = parse_schema(j.at("schema").get<std::string>());
    if (!schema) throw ConfigError("unknown schema " + j.at("schema").get<std::string>());
    c.schema = *schema;
    c.noise_density = j.at("noise_density").get<double>();
    c.test_fraction = j.at("test_fraction").get<double>();
    c.folds = j.at("folds").get<std::size_t>();
    c.stratify = j.at("stratify").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    std::tie(c.depth, c.filters) = nn::NetworkConfig::parse_arch(j.at("arch").get<std::string>());
    c.residual_scale = j.at("residual_scale").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.batch = j.at("batch").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.rotate = j.at("rotate").get<bool>();
    if (!j.at("standardize").is_null()) c.standardize = j.at("standardize").get<bool>();
    if (!j.at("oversample_task").is_null()) c.oversample_task = j.at("oversample_task").get<std::string>();
    if (!j.at("fold").is_null()) c.fold = j.at("fold").get<std::size_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad experiment config: ") + e.what());
  }
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline DatasetSplit experiment_split(const Dataset& ds, const ExperimentConfig& cfg) {
  std::function<int(std::size_t)> strat;
  if (cfg.stratify) {
    if (ds.tasks.empty()) throw ConfigError("stratification needs a label column");
    strat = [&ds](std::size_t id) {
      const auto& v = ds.by_id(id).labels[0];
      return v ? (*v > 0.5 ? 1 : 0) : -1;
    };
  }
  return make_split(ds.ids(), cfg.test_fraction, cfg.folds, cfg.seed, strat);
}

/// Training ids of a fold after oversampling (binary data only).
inline std::vector<std::size_t> fold_training_ids(const Dataset& ds, const Fold& fold, const ExperimentConfig& cfg) {
  if (cfg.label_kind != LabelKind::binary || ds.tasks.empty()) return fold.train_ids;
  std::size_t task = 0;
  if (cfg.oversample_task) {
    if (cfg.oversample_task->empty()) return fold.train_ids;
    const auto t = ds.task_index(*cfg.oversample_task);
    if (!t) throw ConfigError("oversample task '" + *cfg.oversample_task + "' is not a column");
    task = *t;
  }
  return oversample_minority(fold.train_ids, ds, task);
}

struct FoldOutcome {
  std::size_t fold = 0;
  TrainResult trained;
  EvalReport validation;
};

inline std::vector<std::size_t> encoded_only(const Encoder& enc, const std::vector<std::size_t>& ids) {
  std::vector<std::size_t> out;
  for (auto id : ids)
    if (enc.contains(id)) out.push_back(id);
  return out;
}

/// Trains one fold from freshly initialised weights and scores its validation set.
inline FoldOutcome run_fold(const Dataset& ds, const Encoder& enc, const DatasetSplit& split, std::size_t fold,
                            const ExperimentConfig& cfg, std::size_t threads = 1) {
  if (fold >= split.folds.size()) throw ConfigError("fold index out of range");
  const Fold& f = split.folds[fold];
  const nn::Network<float> net(cfg.network(ds.tasks.size()));
  auto trained = train(net, enc, ds, fold_training_ids(ds, f, cfg), f.validation_ids, cfg.training(threads));
  const auto val = encoded_only(enc, f.validation_ids);
  auto report = evaluate(trained.model.config().head, ds, val, predict(trained.model, enc, val, threads));
  return {fold, std::move(trained), std::move(report)};
}

inline std::string fold_dir(const std::string& out_dir, std::size_t fold) {
  return (std::filesystem::path(out_dir) / ("fold_" + std::to_string(fold))).string();
}

inline void write_skipped_csv(const std::vector<EncodeSkip>& skipped, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "record_id,smiles,reason\n";
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (const auto& s : skipped) out << s.record_id << ',' << quote(s.smiles) << ',' << quote(s.reason) << '\n';
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : r.per_task) per.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return {{"per_task", per}, {"aggregate", r.aggregate ? nlohmann::json(*r.aggregate) : nlohmann::json(nullptr)}};
}

/// Writes history.csv, model.cmdl and metrics.json for a trained fold.
inline void save_fold(const FoldOutcome& o, const std::string& out_dir) {
  const auto dir = fold_dir(out_dir, o.fold);
  std::filesystem::create_directories(dir);
  write_history_csv(o.trained.history, dir + "/history.csv");
  write_checkpoint(o.trained.model, dir + "/model.cmdl");
  write_json_file({{"fold", o.fold},
                   {"best_epoch", o.trained.best_epoch},
                   {"epochs_run", o.trained.history.size()},
                   {"rotation_fallbacks", o.trained.rotation_fallbacks},
                   {"validation", report_json(o.validation)}},
                  dir + "/metrics.json");
}

/// Larger is better for AUC, smaller for RMSE.
inline bool better_metric(LabelKind kind, double a, double b) { return kind == LabelKind::binary ? a > b : a < b; }

/// Folds selected by cfg.fold, or all of them.
inline std::vector<std::size_t> selected_folds(const ExperimentConfig& cfg) {
  if (cfg.fold) {
    if (*cfg.fold >= cfg.folds) throw ConfigError("fold index out of range");
    return {*cfg.fold};
  }
  std::vector<std::size_t> all(cfg.folds);
  std::iota(all.begin(), all.end(), 0);
  return all;
}

/// Mean validation metric over the selected folds; folds whose metric is
/// undefined are left out. Empty when no fold could be scored.
inline std::optional<double> cv_validation_metric(const Dataset& ds, const Encoder& enc, const ExperimentConfig& cfg,
                                                  std::size_t threads = 1) {
  const auto split = experiment_split(ds, cfg);
  double sum = 0.0;
  std::size_t n = 0;
  for (auto f : selected_folds(cfg)) {
    const auto o = run_fold(ds, enc, split, f, cfg, threads);
    if (!o.validation.aggregate) continue;
    sum += *o.validation.aggregate;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / double(n);
}

inline constexpr double kTruthMinAuc = 0.99;
inline constexpr double kNoiseMinAuc = 0.40;
inline constexpr double kNoiseMaxAuc = 0.60;

struct ControlReport {
  std::optional<double> truth_auc;
  std::vector<std::optional<double>> noise_auc;  // one per seed
  std::optional<double> noise_mean;
  bool truth_pass = false;
  bool noise_pass = false;
};

/// Truth and Noise control experiments on a binary dataset. Truth uses
/// cfg.seed; Noise averages seeds cfg.seed .. cfg.seed + noise_seeds - 1.
/// With `shuffle_truth_labels` the Truth images are drawn from a seeded
/// permutation of the labels while training still uses the true ones.
inline ControlReport run_controls(const Dataset& ds, ExperimentConfig cfg, std::size_t threads = 1,
                                  bool shuffle_truth_labels = false, std::size_t noise_seeds = 3) {
  if (cfg.label_kind != LabelKind::binary) throw ConfigError("controls need a binary task");
  if (ds.size() < cfg.folds + 1) throw TooFewRecords(ds.size(), cfg.folds + 1);
  ControlReport r;

  cfg.schema = SchemaKind::Truth;
  Dataset painted = ds;
  if (shuffle_truth_labels) {
    std::vector<std::optional<double>> labels;
    for (const auto& rec : ds.records) labels.push_back(rec.labels[0]);
    Rng rng(derive_seed(cfg.seed, 5));
    shuffle(labels, rng);
    for (std::size_t i = 0; i < labels.size(); ++i) painted.records[i].labels[0] = labels[i];
  }
  {
    const Encoder enc(painted, cfg.channel_schema(), 0, threads);
    r.truth_auc = cv_validation_metric(ds, enc, cfg, threads);
  }
  r.truth_pass = r.truth_auc && *r.truth_auc >= kTruthMinAuc;

  cfg.schema = SchemaKind::Noise;
  const std::uint64_t base = cfg.seed;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < noise_seeds; ++k) {
    cfg.seed = base + k;
    const Encoder enc(ds, cfg.channel_schema(), 0, threads);
    const auto auc = cv_validation_metric(ds, enc, cfg, threads);
    r.noise_auc.push_back(auc);
    if (auc) {
      sum += *auc;
      ++n;
    }
  }
  if (n > 0) r.noise_mean = sum / double(n);
  r.noise_pass = r.noise_mean && *r.noise_mean >= kNoiseMinAuc && *r.noise_mean <= kNoiseMaxAuc;
  return r;
}

}  // namespace chemimg
