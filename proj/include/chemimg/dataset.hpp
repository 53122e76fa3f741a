#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "chemimg/error.hpp"
#include "chemimg/random.hpp"
#include "json.hpp"

namespace chemimg {

class MissingSmilesColumn : public DataError {
 public:
  MissingSmilesColumn() : DataError("MissingSmilesColumn: CSV header has no 'smiles' column") {}
};

class BadLabel : public DataError {
 public:
  BadLabel(std::size_t row, const std::string& column, const std::string& cell)
      : DataError("BadLabel: row " + std::to_string(row) + " column '" + column + "' has value '" + cell + "'"),
        row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class TooFewRecords : public DataError {
 public:
  TooFewRecords(std::size_t have, std::size_t need)
      : DataError("TooFewRecords: " + std::to_string(have) + " records, need at least " + std::to_string(need)) {}
};

struct LabeledRecord {
  std::string smiles;
  std::vector<std::optional<double>> labels;
  std::size_t record_id = 0;
};

enum class LabelKind { binary, regression };

struct Dataset {
  std::vector<std::string> tasks;
  std::vector<LabeledRecord> records;
  std::vector<std::size_t> unlabeled_rows;  // rows dropped for having no label at all

  std::size_t size() const { return records.size(); }

  const LabeledRecord& by_id(std::size_t id) const {
    auto it = std::lower_bound(records.begin(), records.end(), id,
                               [](const LabeledRecord& r, std::size_t v) { return r.record_id < v; });
    if (it == records.end() || it->record_id != id) throw DataError("unknown record id " + std::to_string(id));
    return *it;
  }

  std::vector<std::size_t> ids() const {
    std::vector<std::size_t> out;
    for (const auto& r : records) out.push_back(r.record_id);
    return out;
  }

  std::optional<std::size_t> task_index(const std::string& name) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (tasks[i] == name) return i;
    return std::nullopt;
  }
};

namespace detail {

/// One CSV record (RFC 4180 quoting). Returns false at end of input.
inline bool read_csv_row(std::istream& in, std::vector<std::string>& out) {
  out.clear();
  std::string field;
  bool quoted = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (!any) return false;
  out.push_back(field);
  return true;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

}  // namespace detail

/// Reads a header-first CSV with a 'smiles' column; every other column is a task.
/// record_id is the zero-based data row index. Empty cells are missing labels;
/// rows with no label at all are dropped unless the file has no task columns.
inline Dataset load_csv(std::istream& in, LabelKind kind = LabelKind::binary) {
  Dataset ds;
  std::vector<std::string> row;
  if (!detail::read_csv_row(in, row)) throw MissingSmilesColumn();
  if (!row.empty() && row[0].rfind("\xEF\xBB\xBF", 0) == 0) row[0].erase(0, 3);
  std::optional<std::size_t> smiles_col;
  std::vector<std::size_t> task_cols;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const std::string name = detail::trim(row[i]);
    if (name == "smiles" && !smiles_col) {
      smiles_col = i;
    } else {
      task_cols.push_back(i);
      ds.tasks.push_back(name);
    }
  }
  if (!smiles_col) throw MissingSmilesColumn();

  std::size_t index = 0;
  while (detail::read_csv_row(in, row)) {
    if (row.size() == 1 && detail::trim(row[0]).empty()) continue;  // blank line
    const std::size_t id = index++;
    LabeledRecord rec;
    rec.record_id = id;
    rec.smiles = *smiles_col < row.size() ? detail::trim(row[*smiles_col]) : "";
    bool any = false;
    for (std::size_t t = 0; t < task_cols.size(); ++t) {
      const std::string cell = task_cols[t] < row.size() ? detail::trim(row[task_cols[t]]) : "";
      if (cell.empty()) {
        rec.labels.emplace_back();
        continue;
      }
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw BadLabel(id, ds.tasks[t], cell);
      }
      if (used != cell.size() || !std::isfinite(v)) throw BadLabel(id, ds.tasks[t], cell);
      if (kind == LabelKind::binary && v != 0.0 && v != 1.0) throw BadLabel(id, ds.tasks[t], cell);
      rec.labels.emplace_back(v);
      any = true;
    }
    if (any || task_cols.empty()) {
      ds.records.push_back(std::move(rec));
    } else {
      ds.unlabeled_rows.push_back(id);
    }
  }
  return ds;
}

inline Dataset load_csv(const std::string& path, LabelKind kind = LabelKind::binary) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return load_csv(in, kind);
}

struct Fold {
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> validation_ids;
  bool operator==(const Fold&) const = default;
};

struct DatasetSplit {
  std::uint64_t seed = 0;
  std::vector<std::size_t> test_ids;
  std::vector<Fold> folds;
  bool operator==(const DatasetSplit&) const = default;
};

/// Seeded shuffle; the first round(test_fraction * N) ids form the test set and
/// the rest are dealt into k contiguous near-equal folds. With `stratify_by`,
/// the remainder is ordered by class before dealing round-robin.
inline DatasetSplit make_split(std::vector<std::size_t> ids, double test_fraction, std::size_t k, std::uint64_t seed,
                               const std::function<int(std::size_t)>& stratify_by = {}) {
  if (k < 2) throw ConfigError("k must be at least 2");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  const std::size_t n = ids.size();
  if (n < k + 1) throw TooFewRecords(n, k + 1);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(n)));
  if (n - n_test < k) throw TooFewRecords(n, n_test + k);

  Rng rng(seed);
  shuffle(ids, rng);
  DatasetSplit split;
  split.seed = seed;
  split.test_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> rest(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());

  std::vector<std::vector<std::size_t>> parts(k);
  if (stratify_by) {
    std::stable_sort(rest.begin(), rest.end(),
                     [&](std::size_t a, std::size_t b) { return stratify_by(a) < stratify_by(b); });
    for (std::size_t i = 0; i < rest.size(); ++i) parts[i % k].push_back(rest[i]);
  } else {
    const std::size_t base = rest.size() / k, extra = rest.size() % k;
    std::size_t at = 0;
    for (std::size_t f = 0; f < k; ++f) {
      const std::size_t len = base + (f < extra ? 1 : 0);
      parts[f].assign(rest.begin() + static_cast<std::ptrdiff_t>(at), rest.begin() + static_cast<std::ptrdiff_t>(at + len));
      at += len;
    }
  }
  for (std::size_t f = 0; f < k; ++f) {
    Fold fold;
    fold.validation_ids = parts[f];
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) fold.train_ids.insert(fold.train_ids.end(), parts[g].begin(), parts[g].end());
    split.folds.push_back(std::move(fold));
  }
  return split;
}

enum class OversampleMode {
  total_copies,   // each minority id appears r times in total
  extra_copies,   // each minority id is appended r more times (r + 1 in total)
};

/// Balances a binary task in a training id list by repeating minority ids,
/// r = floor(majority / minority). Ids whose label on `task` is missing are
/// kept once and do not count toward either class.
inline std::vector<std::size_t> oversample_minority(const std::vector<std::size_t>& train_ids,
                                                    const std::function<std::optional<double>(std::size_t)>& label,
                                                    OversampleMode mode = OversampleMode::total_copies) {
  std::vector<std::size_t> pos, neg;
  for (auto id : train_ids) {
    const auto v = label(id);
    if (!v) continue;
    (*v > 0.5 ? pos : neg).push_back(id);
  }
  if (pos.empty() || neg.empty()) throw SingleClass("oversampling");
  const auto& minority = pos.size() < neg.size() ? pos : neg;
  const auto& majority = pos.size() < neg.size() ? neg : pos;
  const std::size_t r = majority.size() / minority.size();
  const std::size_t extra = mode == OversampleMode::total_copies ? r - 1 : r;
  std::vector<std::size_t> out = train_ids;
  for (std::size_t k = 0; k < extra; ++k) out.insert(out.end(), minority.begin(), minority.end());
  return out;
}

inline std::vector<std::size_t> oversample_minority(const std::vector<std::size_t>& train_ids, const Dataset& ds,
                                                    std::size_t task,
                                                    OversampleMode mode = OversampleMode::total_copies) {
  if (task >= ds.tasks.size()) throw ConfigError("oversample task index out of range");
  return oversample_minority(
      train_ids, [&](std::size_t id) { return ds.by_id(id).labels[task]; }, mode);
}

inline nlohmann::json split_to_json(const DatasetSplit& s) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["test_ids"] = s.test_ids;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : s.folds) j["folds"].push_back({{"train_ids", f.train_ids}, {"validation_ids", f.validation_ids}});
  return j;
}

inline DatasetSplit split_from_json(const nlohmann::json& j) {
  try {
    DatasetSplit s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.test_ids = j.at("test_ids").get<std::vector<std::size_t>>();
    for (const auto& f : j.at("folds"))
      s.folds.push_back({f.at("train_ids").get<std::vector<std::size_t>>(),
                         f.at("validation_ids").get<std::vector<std::size_t>>()});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad split manifest: ") + e.what());
  }
}

inline void write_split_manifest(const DatasetSplit& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << split_to_json(s).dump(2) << '\n';
}

inline DatasetSplit read_split_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return split_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("bad split manifest: ") + e.what());
  }
}

/// One entry of an epoch: which record and, when augmenting, the rotation angle.
struct BatchItem {
  std::size_t id = 0;
  std::optional<double> angle;
};

/// Deterministic epoch order over training ids: a fresh seeded shuffle per
/// epoch and, with augmentation, an angle ~ U[0, 180) per item.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> ids, std::size_t batch_size, std::uint64_t seed, bool augment)
      : ids_(std::move(ids)), batch_(batch_size), seed_(seed), augment_(augment) {
    if (batch_ == 0) throw ConfigError("batch size must be positive");
  }

  std::vector<std::vector<BatchItem>> epoch(std::size_t e) const {
    Rng rng(derive_seed(seed_, e));
    std::vector<std::size_t> order = ids_;
    shuffle(order, rng);
    std::vector<std::vector<BatchItem>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_) {
      std::vector<BatchItem> b;
      for (std::size_t j = i; j < std::min(order.size(), i + batch_); ++j) {
        BatchItem item{order[j], std::nullopt};
        if (augment_) item.angle = 180.0 * uniform_real(rng);
        b.push_back(item);
      }
      out.push_back(std::move(b));
    }
    return out;
  }

  std::size_t size() const { return ids_.size(); }

 private:
  std::vector<std::size_t> ids_;
  std::size_t batch_;
  std::uint64_t seed_;
  bool augment_;
};

}  // namespace chemimg
