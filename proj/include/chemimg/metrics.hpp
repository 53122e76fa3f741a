#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <vector>

#include "chemimg/error.hpp"

namespace chemimg {

class EmptyInput : public DataError {
 public:
  EmptyInput() : DataError("Empty: metric needs at least one value") {}
};

/// Mann-Whitney AUC: (concordant pairs + 0.5 * tied pairs) / (positives * negatives).
/// Entries with mask[i] == false are ignored; an empty mask means all present.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels,
                      const std::vector<bool>& mask = {}) {
  if (scores.size() != labels.size() || (!mask.empty() && mask.size() != scores.size()))
    throw ShapeMismatch("roc_auc: scores, labels and mask differ in length");
  std::vector<std::pair<double, int>> v;
  v.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    v.emplace_back(scores[i], labels[i] != 0 ? 1 : 0);
  }
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  // walk tie groups in ascending score order, counting negatives strictly below
  double concordant = 0.0;
  std::size_t neg_below = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i, p = 0, n = 0;
    for (; j < v.size() && v[j].first == v[i].first; ++j) (v[j].second ? p : n)++;
    concordant += double(p) * double(neg_below) + 0.5 * double(p) * double(n);
    neg_below += n;
    pos += p;
    neg += n;
    i = j;
  }
  if (pos == 0 || neg == 0) throw SingleClass();
  return concordant / (double(pos) * double(neg));
}

inline double rmse(const std::vector<double>& preds, const std::vector<double>& targets) {
  if (preds.size() != targets.size()) throw ShapeMismatch("rmse: length mismatch");
  if (preds.empty()) throw EmptyInput();
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += (preds[i] - targets[i]) * (preds[i] - targets[i]);
  return std::sqrt(s / double(preds.size()));
}

/// Per-task metric values plus the mean over tasks that could be scored.
struct EvalReport {
  std::vector<std::optional<double>> per_task;
  std::optional<double> aggregate;
};

/// Column-wise AUC for a samples x tasks layout. Tasks lacking either class are
/// left empty and excluded from the mean.
inline EvalReport evaluate_auc(const std::vector<std::vector<double>>& scores,
                               const std::vector<std::vector<double>>& labels,
                               const std::vector<std::vector<bool>>& mask) {
  EvalReport r;
  if (scores.empty()) return r;
  const std::size_t tasks = scores.front().size();
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t t = 0; t < tasks; ++t) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!mask[i][t]) continue;
      s.push_back(scores[i][t]);
      l.push_back(labels[i][t] > 0.5 ? 1 : 0);
    }
    try {
      const double auc = roc_auc(s, l);
      r.per_task.push_back(auc);
      sum += auc;
      ++used;
    } catch (const SingleClass&) {
      r.per_task.push_back(std::nullopt);
    }
  }
  if (used > 0) r.aggregate = sum / double(used);
  return r;
}

/// Column-wise RMSE over present labels; the aggregate is the task mean.
inline EvalReport evaluate_rmse(const std::vector<std::vector<double>>& preds,
                                const std::vector<std::vector<double>>& labels,
                                const std::vector<std::vector<bool>>& mask) {
  EvalReport r;
  if (preds.empty()) return r;
  const std::size_t tasks = preds.front().size();
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t t = 0; t < tasks; ++t) {
    std::vector<double> p, y;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (!mask[i][t]) continue;
      p.push_back(preds[i][t]);
      y.push_back(labels[i][t]);
    }
    if (p.empty()) {
      r.per_task.push_back(std::nullopt);
      continue;
    }
    const double e = rmse(p, y);
    r.per_task.push_back(e);
    sum += e;
    ++used;
  }
  if (used > 0) r.aggregate = sum / double(used);
  return r;
}

}  // namespace chemimg
