// chemimg: encode molecules as images, split datasets, train and evaluate
// the CNN, and run the Truth/Noise control experiments.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 data or I/O error,
// 3 internal error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "chemimg/checkpoint.hpp"
#include "chemimg/dataset.hpp"
#include "chemimg/encode.hpp"
#include "chemimg/experiment.hpp"
#include "chemimg/png.hpp"
#include "chemimg/synth.hpp"
#include "chemimg/tensor_io.hpp"
#include "chemimg/train.hpp"

namespace fs = std::filesystem;
using namespace chemimg;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

/// Flag values as typed; only flags that were given override a loaded config.
struct Flags {
  std::string config_path;
  std::string csv;
  std::string labels = "binary";
  std::string schema = "std";
  double noise_density = 0.02;
  double test_fraction = 0.1;
  std::size_t folds = 5;
  bool stratify = false;
  std::uint64_t seed = 0;
  std::string arch = "T1_F8";
  std::size_t epochs = 100;
  std::size_t patience = 25;
  std::size_t batch = 32;
  double lr = 1e-3;
  bool rotate = true;
  std::string standardize = "auto";
  std::string oversample_task;
  std::size_t fold = 0;
  std::string out;

  std::vector<std::pair<std::string, CLI::Option*>> opts;

  bool given(const std::string& name) const {
    for (const auto& [n, o] : opts)
      if (n == name) return o->count() > 0;
    return false;
  }
};

void add_data_flags(CLI::App* cmd, Flags& f) {
  f.opts.emplace_back("csv", cmd->add_option("--csv", f.csv, "input CSV with a 'smiles' column"));
  f.opts.emplace_back("labels",
                      cmd->add_option("--labels", f.labels, "label kind")->check(CLI::IsMember({"binary", "regression"})));
  f.opts.emplace_back("schema", cmd->add_option("--schema", f.schema,
                                                "std|reda|redb|enga|engb|engc|engd|noise|truth|scrambled"));
  f.opts.emplace_back("noise-density", cmd->add_option("--noise-density", f.noise_density, "Noise schema density"));
  f.opts.emplace_back("seed", cmd->add_option("--seed", f.seed, "master seed"));
}

void add_split_flags(CLI::App* cmd, Flags& f) {
  f.opts.emplace_back("test-fraction", cmd->add_option("--test-fraction", f.test_fraction, "held-out test share"));
  f.opts.emplace_back("folds", cmd->add_option("--folds", f.folds, "cross-validation folds"));
  f.opts.emplace_back("stratify", cmd->add_flag("--stratify", f.stratify, "stratify folds by the first task"));
}

void add_train_flags(CLI::App* cmd, Flags& f) {
  f.opts.emplace_back("arch", cmd->add_option("--arch", f.arch, "network T<d>_F<n>"));
  f.opts.emplace_back("epochs", cmd->add_option("--epochs", f.epochs, "maximum epochs"));
  f.opts.emplace_back("patience", cmd->add_option("--patience", f.patience, "early-stopping patience"));
  f.opts.emplace_back("batch", cmd->add_option("--batch", f.batch, "batch size"));
  f.opts.emplace_back("lr", cmd->add_option("--lr", f.lr, "RMSprop learning rate"));
  f.opts.emplace_back("rotate", cmd->add_flag("--rotate,!--no-rotate", f.rotate, "random rotation augmentation"));
  f.opts.emplace_back("standardize", cmd->add_option("--standardize", f.standardize, "input standardisation")
                                         ->check(CLI::IsMember({"auto", "on", "off"})));
  f.opts.emplace_back("oversample-task",
                      cmd->add_option("--oversample-task", f.oversample_task,
                                      "binary column used for minority oversampling; empty disables"));
}

void add_config_flag(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "replay a config.json echo; explicit flags override it")
      ->check(CLI::ExistingFile);
}

/// Config from --config (if given) with explicitly passed flags applied on top.
ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c;
  if (!f.config_path.empty()) c = experiment_from_json(read_json_file(f.config_path));
  const bool base = f.config_path.empty();
  auto take = [&](const std::string& name) { return base ? true : f.given(name); };

  if (take("csv")) c.csv = f.csv;
  if (take("labels")) c.label_kind = f.labels == "regression" ? LabelKind::regression : LabelKind::binary;
  if (take("schema")) {
    const auto s = parse_schema(f.schema);
    if (!s) throw ConfigError("unknown schema '" + f.schema + "'");
    c.schema = *s;
  }
  if (take("noise-density")) c.noise_density = f.noise_density;
  if (take("seed")) c.seed = f.seed;
  if (take("test-fraction")) c.test_fraction = f.test_fraction;
  if (take("folds")) c.folds = f.folds;
  if (take("stratify")) c.stratify = f.stratify;
  if (take("arch")) std::tie(c.depth, c.filters) = nn::NetworkConfig::parse_arch(f.arch);
  if (take("epochs")) c.epochs = f.epochs;
  if (take("patience")) c.patience = f.patience;
  if (take("batch")) c.batch = f.batch;
  if (take("lr")) c.lr = f.lr;
  if (take("rotate")) c.rotate = f.rotate;
  if (take("standardize")) {
    c.standardize.reset();
    if (f.standardize == "on") c.standardize = true;
    if (f.standardize == "off") c.standardize = false;
  }
  if (f.given("oversample-task")) c.oversample_task = f.oversample_task;
  if (f.given("fold")) c.fold = f.fold;
  if (c.csv.empty()) throw ConfigError("--csv is required");
  c.csv = fs::absolute(c.csv).lexically_normal().string();
  if (c.batch == 0) throw ConfigError("batch size must be at least 1");
  return c;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

const char* metric_name(LabelKind k) { return k == LabelKind::binary ? "auc" : "rmse"; }

std::string fmt(std::optional<double> v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

Dataset load(const ExperimentConfig& c) { return load_csv(c.csv, c.label_kind); }

void report_skips(const Encoder& enc) {
  if (!enc.skipped().empty())
    std::fprintf(stderr, "skipped %zu of %zu records (see skipped.csv)\n", enc.skipped().size(),
                 enc.skipped().size() + enc.ids().size());
}

int cmd_encode(const Flags& f) {
  const auto c = resolve(f);
  const auto ds = load(c);
  const Encoder enc(ds, c.channel_schema(), 0, thread_count());
  ensure_dir(f.out);
  write_tensor_file(enc.render_all(), join(f.out, "images.cimg"));
  {
    std::ofstream ids(join(f.out, "ids.csv"), std::ios::binary | std::ios::trunc);
    if (!ids) throw IoError("cannot write ids.csv");
    ids << "index,record_id\n";
    for (std::size_t i = 0; i < enc.ids().size(); ++i) ids << i << ',' << enc.ids()[i] << '\n';
  }
  write_skipped_csv(enc.skipped(), join(f.out, "skipped.csv"));
  write_json_file(to_json(c), join(f.out, "config.json"));
  std::printf("encoded %zu records with schema %s (%zu channels), skipped %zu\n", enc.ids().size(),
              std::string(schema_name(c.schema)).c_str(), enc.channels(), enc.skipped().size());
  return kOk;
}

int cmd_split(const Flags& f) {
  const auto c = resolve(f);
  const auto ds = load(c);
  const auto split = experiment_split(ds, c);
  ensure_dir(f.out);
  write_split_manifest(split, join(f.out, "split.json"));
  write_json_file(to_json(c), join(f.out, "config.json"));
  std::printf("test %zu", split.test_ids.size());
  for (std::size_t k = 0; k < split.folds.size(); ++k)
    std::printf(", fold %zu train %zu val %zu", k, split.folds[k].train_ids.size(),
                split.folds[k].validation_ids.size());
  std::printf("\n");
  return kOk;
}

int cmd_train(const Flags& f) {
  const auto c = resolve(f);
  const auto ds = load(c);
  const std::size_t threads = thread_count();
  const Encoder enc(ds, c.channel_schema(), 0, threads);
  report_skips(enc);
  const auto split = experiment_split(ds, c);
  const auto folds = selected_folds(c);

  ensure_dir(f.out);
  write_json_file(to_json(c), join(f.out, "config.json"));
  write_split_manifest(split, join(f.out, "split.json"));
  write_skipped_csv(enc.skipped(), join(f.out, "skipped.csv"));

  nlohmann::json summary = nlohmann::json::array();
  for (auto k : folds) {
    const auto o = run_fold(ds, enc, split, k, c, threads);
    save_fold(o, f.out);
    std::printf("fold %zu validation %s %s (best epoch %zu of %zu)\n", k, metric_name(c.label_kind),
                fmt(o.validation.aggregate).c_str(), o.trained.best_epoch, o.trained.history.size());
    std::fflush(stdout);
    summary.push_back({{"fold", k}, {"validation", report_json(o.validation)}});
  }
  write_json_file(summary, join(f.out, "summary.json"));
  return kOk;
}

int cmd_evaluate(const std::string& run_dir, const std::string& csv_override) {
  auto c = experiment_from_json(read_json_file(join(run_dir, "config.json")));
  if (!csv_override.empty()) c.csv = csv_override;
  const auto ds = load(c);
  const std::size_t threads = thread_count();
  const Encoder enc(ds, c.channel_schema(), 0, threads);
  const auto split = read_split_manifest(join(run_dir, "split.json"));
  const char* name = metric_name(c.label_kind);

  struct Scored {
    std::size_t fold;
    std::optional<double> val;
  };
  std::vector<Scored> scored;
  std::optional<std::size_t> best;
  double sum = 0.0;
  std::size_t n = 0;
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t k = 0; k < split.folds.size(); ++k) {
    const auto path = join(fold_dir(run_dir, k), "model.cmdl");
    if (!fs::exists(path)) continue;
    const auto net = read_checkpoint(path);
    const auto val = encoded_only(enc, split.folds[k].validation_ids);
    const auto rep = evaluate(net.config().head, ds, val, predict(net, enc, val, threads));
    std::printf("fold %zu validation %s %s\n", k, name, fmt(rep.aggregate).c_str());
    folds.push_back({{"fold", k}, {"validation", report_json(rep)}});
    scored.push_back({k, rep.aggregate});
    if (rep.aggregate) {
      sum += *rep.aggregate;
      ++n;
      if (!best || better_metric(c.label_kind, *rep.aggregate, *scored[*best].val)) best = scored.size() - 1;
    }
  }
  if (scored.empty()) throw IoError("no fold_*/model.cmdl under " + run_dir);

  const std::optional<double> mean = n ? std::optional<double>(sum / double(n)) : std::nullopt;
  std::printf("mean validation %s %s\n", name, fmt(mean).c_str());
  nlohmann::json out = {{"folds", folds}, {"mean_validation", mean ? nlohmann::json(*mean) : nlohmann::json(nullptr)}};
  if (best) {
    const std::size_t k = scored[*best].fold;
    const auto net = read_checkpoint(join(fold_dir(run_dir, k), "model.cmdl"));
    const auto test = encoded_only(enc, split.test_ids);
    const auto rep = evaluate(net.config().head, ds, test, predict(net, enc, test, threads));
    std::printf("best fold %zu test %s %s\n", k, name, fmt(rep.aggregate).c_str());
    out["best_fold"] = k;
    out["test"] = report_json(rep);
  }
  write_json_file(out, join(run_dir, "evaluation.json"));
  return kOk;
}

int cmd_controls(const Flags& f, bool shuffle_truth, std::size_t noise_seeds) {
  auto c = resolve(f);
  const auto ds = load(c);
  if (!f.given("epochs") && f.config_path.empty()) c.epochs = 30;
  ensure_dir(f.out);
  write_json_file(to_json(c), join(f.out, "config.json"));
  const auto r = run_controls(ds, c, thread_count(), shuffle_truth, noise_seeds);

  auto verdict = [](bool ok) { return ok ? "PASS" : "FAIL"; };
  char band[64];
  std::snprintf(band, sizeof band, "[%.2f, %.2f]", kNoiseMinAuc, kNoiseMaxAuc);
  std::printf("truth%s validation auc %s (>= %.2f) %s\n", shuffle_truth ? " (shuffled labels)" : "",
              fmt(r.truth_auc).c_str(), kTruthMinAuc, verdict(r.truth_pass));
  nlohmann::json noise = nlohmann::json::array();
  for (std::size_t k = 0; k < r.noise_auc.size(); ++k) {
    std::printf("noise seed %llu validation auc %s\n", static_cast<unsigned long long>(c.seed + k),
                fmt(r.noise_auc[k]).c_str());
    noise.push_back(r.noise_auc[k] ? nlohmann::json(*r.noise_auc[k]) : nlohmann::json(nullptr));
  }
  std::printf("noise mean validation auc %s (in %s) %s\n", fmt(r.noise_mean).c_str(), band, verdict(r.noise_pass));

  auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  write_json_file({{"shuffle_truth_labels", shuffle_truth},
                   {"truth", {{"auc", opt(r.truth_auc)}, {"pass", r.truth_pass}}},
                   {"noise", {{"auc", noise}, {"mean", opt(r.noise_mean)}, {"pass", r.noise_pass}}}},
                  join(f.out, "controls.json"));
  return kOk;
}

int cmd_preview(const Flags& f, std::size_t record, std::size_t channel, std::optional<double> angle) {
  const auto c = resolve(f);
  const auto ds = load(c);
  Dataset one;
  one.tasks = ds.tasks;
  one.records.push_back(ds.by_id(record));
  const Encoder enc(one, c.channel_schema(), 0, 1);
  if (!enc.skipped().empty()) throw DataError(enc.skipped().front().reason);
  const auto img = enc.render(record, angle);
  if (channel >= img.channels) throw ConfigError("channel out of range");
  export_png_preview(img, f.out, channel);
  std::printf("wrote %s (%zux%zu, channel %zu of %zu)\n", f.out.c_str(), img.width, img.height, channel,
              img.channels);
  return kOk;
}

int cmd_synth(const std::string& kind, std::size_t n, std::uint64_t seed, double decoys, const std::string& out) {
  const Dataset ds = kind == "random" ? random_label_set(n, seed) : functional_group_set(n, seed, decoys);
  const auto parent = fs::path(out).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  write_csv(ds, out);
  std::printf("wrote %zu molecules to %s\n", ds.size(), out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chemimg: 2D molecular images and a small CNN trainer"};
  app.require_subcommand(1);

  Flags f;

  auto* encode = app.add_subcommand("encode", "render every record to a CIMG tensor file");
  add_data_flags(encode, f);
  add_config_flag(encode, f);
  encode->add_option("--out", f.out, "output directory")->required();

  auto* split = app.add_subcommand("split", "write the test/fold manifest");
  add_data_flags(split, f);
  add_split_flags(split, f);
  add_config_flag(split, f);
  split->add_option("--out", f.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train one or all folds");
  add_data_flags(train, f);
  add_split_flags(train, f);
  add_train_flags(train, f);
  add_config_flag(train, f);
  f.opts.emplace_back("fold", train->add_option("--fold", f.fold, "train only this fold"));
  train->add_option("--out", f.out, "output directory")->required();

  std::string run_dir, csv_override;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score the models of a training run");
  evaluate_cmd->add_option("--run", run_dir, "output directory of a train run")->required()->check(CLI::ExistingDirectory);
  evaluate_cmd->add_option("--csv", csv_override, "override the CSV path recorded in the run");

  bool shuffle_truth = false;
  std::size_t noise_seeds = 3;
  auto* controls = app.add_subcommand("controls", "Truth and Noise control experiments");
  add_data_flags(controls, f);
  add_split_flags(controls, f);
  add_train_flags(controls, f);
  add_config_flag(controls, f);
  controls->add_flag("--shuffle-truth-labels", shuffle_truth, "paint Truth images from permuted labels");
  controls->add_option("--noise-seeds", noise_seeds, "Noise repetitions")->check(CLI::PositiveNumber);
  controls->add_option("--out", f.out, "output directory")->required();

  std::size_t record = 0, channel = 0;
  std::optional<double> angle;
  auto* preview = app.add_subcommand("preview", "write one image channel as PNG");
  add_data_flags(preview, f);
  add_config_flag(preview, f);
  preview->add_option("--record", record, "record id (zero-based data row)");
  preview->add_option("--channel", channel, "channel to export");
  preview->add_option("--angle", angle, "rotation in degrees");
  preview->add_option("--out", f.out, "PNG path")->required();

  std::string synth_kind = "random";
  std::size_t synth_n = 300;
  double decoys = 0.2;
  auto* synth = app.add_subcommand("synth", "generate a synthetic toy CSV");
  synth->add_option("--kind", synth_kind, "random: Bernoulli labels; sulfonic: functional-group task")
      ->check(CLI::IsMember({"random", "sulfonic"}));
  synth->add_option("--n", synth_n, "molecule count");
  synth->add_option("--seed", f.seed, "generator seed");
  synth->add_option("--decoy-fraction", decoys, "sulfonic: share of negatives with a tert-butyl decoy");
  synth->add_option("--out", f.out, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*encode) return cmd_encode(f);
    if (*split) return cmd_split(f);
    if (*train) return cmd_train(f);
    if (*evaluate_cmd) return cmd_evaluate(run_dir, csv_override);
    if (*controls) return cmd_controls(f, shuffle_truth, noise_seeds);
    if (*preview) return cmd_preview(f, record, channel, angle);
    if (*synth) return cmd_synth(synth_kind, synth_n, f.seed, decoys, f.out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternal;
  }
  return kUsage;
}
