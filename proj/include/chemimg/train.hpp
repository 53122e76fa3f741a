#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "chemimg/dataset.hpp"
#include "chemimg/encode.hpp"
#include "chemimg/metrics.hpp"
#include "chemimg/nn.hpp"
#include "chemimg/parallel.hpp"

namespace chemimg {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t patience = 25;
  std::size_t batch = 32;
  double lr = 1e-3;
  double rho = 0.9;
  double eps = 1e-8;
  bool rotate = true;
  std::uint64_t seed = 0;
  /// Per-channel input standardisation from training images; unset means on
  /// for engineered schemas only.
  std::optional<bool> standardize;
  std::size_t threads = 1;
};

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_metric;
};

struct TrainResult {
  nn::Network<float> model;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  std::size_t rotation_fallbacks = 0;
  std::size_t masked_batches = 0;
};

/// HWC image to the network's CHW layout.
inline std::vector<float> to_chw(const ChemImage& img) {
  std::vector<float> out(img.data.size());
  const std::size_t HW = img.pixels();
  for (std::size_t i = 0; i < HW; ++i)
    for (std::size_t c = 0; c < img.channels; ++c) out[c * HW + i] = img.data[i * img.channels + c];
  return out;
}

/// Labels and presence mask of one record as network targets.
struct Target {
  std::vector<float> labels;
  std::vector<unsigned char> mask;
};

inline Target target_of(const LabeledRecord& rec) {
  Target t;
  for (const auto& v : rec.labels) {
    t.labels.push_back(v ? float(*v) : 0.0f);
    t.mask.push_back(v ? 1 : 0);
  }
  return t;
}

inline nn::LossResult<float> sample_loss(nn::Head head, const std::vector<float>& out, const Target& t) {
  return head == nn::Head::sigmoid ? nn::masked_bce_loss(out, t.labels, t.mask) : nn::mse_loss(out, t.labels, t.mask);
}

/// Head outputs for each id, unrotated.
inline std::vector<std::vector<double>> predict(const nn::Network<float>& net, const Encoder& enc,
                                                const std::vector<std::size_t>& ids, std::size_t threads = 1) {
  std::vector<std::vector<double>> out(ids.size());
  std::vector<nn::Workspace<float>> ws(std::max<std::size_t>(threads, 1));
  parallel_for(ids.size(), threads, [&](std::size_t i, std::size_t worker) {
    const auto x = to_chw(enc.render(ids[i]));
    const auto& y = net.forward(x.data(), ws[worker]);
    out[i].assign(y.begin(), y.end());
  });
  return out;
}

/// Task-mean AUC (sigmoid head) or task-mean RMSE (linear head) of predictions.
inline EvalReport evaluate(nn::Head head, const Dataset& ds, const std::vector<std::size_t>& ids,
                           const std::vector<std::vector<double>>& preds) {
  std::vector<std::vector<double>> labels;
  std::vector<std::vector<bool>> mask;
  for (auto id : ids) {
    const auto& rec = ds.by_id(id);
    std::vector<double> l;
    std::vector<bool> m;
    for (const auto& v : rec.labels) {
      l.push_back(v.value_or(0.0));
      m.push_back(v.has_value());
    }
    labels.push_back(std::move(l));
    mask.push_back(std::move(m));
  }
  return head == nn::Head::sigmoid ? evaluate_auc(preds, labels, mask) : evaluate_rmse(preds, labels, mask);
}

/// Mean per-sample loss over ids, unrotated. Empty when no id has a label.
inline std::optional<double> mean_loss(nn::Head head, const Dataset& ds, const std::vector<std::size_t>& ids,
                                       const std::vector<std::vector<double>>& preds) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::vector<float> y(preds[i].begin(), preds[i].end());
    const auto r = sample_loss(head, y, target_of(ds.by_id(ids[i])));
    if (r.all_masked) continue;
    sum += r.loss;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / double(n);
}

/// Per-channel mean and standard deviation over the unrotated training images.
inline std::pair<std::vector<float>, std::vector<float>> channel_stats(const Encoder& enc,
                                                                       const std::vector<std::size_t>& ids) {
  const std::size_t C = enc.channels();
  std::vector<double> s(C, 0.0), s2(C, 0.0);
  double count = 0.0;
  std::vector<std::size_t> unique(ids);
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  for (auto id : unique) {
    const auto img = enc.render(id);
    for (std::size_t i = 0; i < img.pixels(); ++i)
      for (std::size_t c = 0; c < C; ++c) {
        const double v = img.data[i * C + c];
        s[c] += v;
        s2[c] += v * v;
      }
    count += double(img.pixels());
  }
  std::vector<float> mean(C, 0.0f), stddev(C, 1.0f);
  if (count == 0.0) return {mean, stddev};
  for (std::size_t c = 0; c < C; ++c) {
    const double m = s[c] / count;
    const double var = std::max(0.0, s2[c] / count - m * m);
    mean[c] = float(m);
    stddev[c] = var > 1e-12 ? float(std::sqrt(var)) : 1.0f;
  }
  return {mean, stddev};
}

/// Trains `net` on train_ids with RMSprop, keeping the weights of the epoch
/// with the lowest validation loss. Stops once `patience` epochs pass without
/// improvement. Without validation ids the last epoch is kept.
///
/// Each sample's gradient is computed independently (possibly on several
/// threads) and the batch gradient is their mean summed in batch order, so
/// results do not depend on the thread count.
inline TrainResult train(nn::Network<float> net, const Encoder& enc, const Dataset& ds,
                         std::vector<std::size_t> train_ids, std::vector<std::size_t> val_ids,
                         const TrainConfig& cfg) {
  if (cfg.patience == 0) throw ConfigError("patience must be at least 1");
  if (net.config().input_channels != enc.channels()) throw ConfigError("network input channels differ from schema");
  if (net.config().tasks != ds.tasks.size()) throw ConfigError("network task count differs from dataset");
  auto encoded = [&](std::vector<std::size_t>& ids) {
    ids.erase(std::remove_if(ids.begin(), ids.end(), [&](std::size_t id) { return !enc.contains(id); }), ids.end());
  };
  encoded(train_ids);
  encoded(val_ids);
  if (train_ids.empty()) throw TooFewRecords(0, 1);

  const bool standardize = cfg.standardize.value_or(is_engineered(enc.schema().kind));
  if (standardize) {
    auto [m, s] = channel_stats(enc, train_ids);
    net.set_standardization(std::move(m), std::move(s));
  }

  const std::size_t threads = std::max<std::size_t>(cfg.threads, 1);
  const nn::Head head = net.config().head;
  TrainResult result{net, {}, 0, 0, 0};
  nn::RmsProp<float> opt(cfg.lr, cfg.rho, cfg.eps);
  const BatchStream stream(train_ids, cfg.batch, cfg.seed, cfg.rotate);

  std::vector<nn::Workspace<float>> ws(threads);
  std::vector<nn::Params<float>> grads(cfg.batch, net.zero_grads());
  std::vector<double> losses(cfg.batch);
  std::vector<unsigned char> used(cfg.batch), fell_back(cfg.batch);
  nn::Params<float> total = net.zero_grads();

  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (const auto& batch : stream.epoch(epoch - 1)) {
      parallel_for(batch.size(), threads, [&](std::size_t i, std::size_t worker) {
        auto& G = grads[i];
        for (auto& t : G) std::fill(t.data.begin(), t.data.end(), 0.0f);
        bool fb = false;
        const auto x = to_chw(enc.render(batch[i].id, batch[i].angle, &fb));
        fell_back[i] = fb;
        const auto& y = net.forward(x.data(), ws[worker]);
        const auto r = sample_loss(head, y, target_of(ds.by_id(batch[i].id)));
        used[i] = !r.all_masked;
        losses[i] = r.loss;
        if (r.all_masked) return;
        std::vector<float> dlogits(r.grad);
        if (head == nn::Head::sigmoid)
          for (std::size_t t = 0; t < dlogits.size(); ++t) dlogits[t] *= y[t] * (1.0f - y[t]);
        net.backward(ws[worker], dlogits.data(), G);
      });

      std::size_t n = 0;
      for (auto& t : total) std::fill(t.data.begin(), t.data.end(), 0.0f);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        result.rotation_fallbacks += fell_back[i];
        if (!used[i]) continue;
        ++n;
        loss_sum += losses[i];
        ++loss_n;
        for (std::size_t p = 0; p < total.size(); ++p)
          for (std::size_t k = 0; k < total[p].size(); ++k) total[p].data[k] += grads[i][p].data[k];
      }
      if (n == 0) {
        ++result.masked_batches;
        continue;
      }
      const float inv = 1.0f / float(n);
      for (auto& t : total)
        for (auto& v : t.data) v *= inv;
      opt.step(net.params(), total);
    }

    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_n ? loss_sum / double(loss_n) : 0.0;
    if (!val_ids.empty()) {
      const auto preds = predict(net, enc, val_ids, threads);
      row.val_loss = mean_loss(head, ds, val_ids, preds);
      row.val_metric = evaluate(head, ds, val_ids, preds).aggregate;
    }
    result.history.push_back(row);

    if (val_ids.empty() || !row.val_loss) {
      result.model = net;
      result.best_epoch = epoch;
      continue;
    }
    if (*row.val_loss < best) {
      best = *row.val_loss;
      since_best = 0;
      result.model = net;
      result.best_epoch = epoch;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

inline std::string format_double(std::optional<double> v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

/// CSV with header epoch,train_loss,val_loss,val_metric; missing values are empty.
inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string out = "epoch,train_loss,val_loss,val_metric\n";
  for (const auto& r : rows)
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.val_loss) + "," +
           format_double(r.val_metric) + "\n";
  return out;
}

inline void write_history_csv(const std::vector<HistoryRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << history_csv(rows);
}

}  // namespace chemimg
