#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "chemimg/dataset.hpp"
#include "chemimg/layout.hpp"
#include "chemimg/molgraph.hpp"
#include "chemimg/parallel.hpp"
#include "chemimg/percept.hpp"
#include "chemimg/random.hpp"
#include "chemimg/raster.hpp"

namespace chemimg {

/// A record that could not be turned into an image.
struct EncodeSkip {
  std::size_t record_id = 0;
  std::string smiles;
  std::string reason;
};

/// Caches molecule, layout and annotations for every record of a dataset and
/// renders images on demand, optionally rotated.
///
/// Records that fail to parse, lay out, annotate or rasterize at 0 degrees are
/// skipped with the error text, for every schema including Noise. Noise
/// images draw from a per-record seed and are rotated at pixel level. Truth
/// images carry the label of `truth_task`.
class Encoder {
 public:
  Encoder(const Dataset& ds, ChannelSchema schema, std::size_t truth_task = 0, std::size_t threads = thread_count())
      : schema_(schema), truth_task_(truth_task) {
    if (schema_.kind == SchemaKind::Scrambled) scramble_ = scramble_map(schema_.scramble_seed);
    if (schema_.kind == SchemaKind::Noise) (void)make_noise_image(0, schema_.noise_density);  // validates density
    if (schema_.kind == SchemaKind::Truth && truth_task_ >= ds.tasks.size())
      throw ConfigError("Truth schema needs a label column");

    std::vector<std::optional<Entry>> slots(ds.size());
    std::vector<std::string> errors(ds.size());
    parallel_for(ds.size(), threads, [&](std::size_t i, std::size_t) {
      try {
        slots[i] = prepare(ds.records[i]);
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& rec = ds.records[i];
      if (!slots[i]) {
        skipped_.push_back({rec.record_id, rec.smiles, errors[i]});
        continue;
      }
      index_[rec.record_id] = entries_.size();
      ids_.push_back(rec.record_id);
      entries_.push_back(std::move(*slots[i]));
    }
  }

  const ChannelSchema& schema() const { return schema_; }
  std::size_t channels() const { return schema_channels(schema_.kind); }
  /// Encoded record ids in dataset order.
  const std::vector<std::size_t>& ids() const { return ids_; }
  const std::vector<EncodeSkip>& skipped() const { return skipped_; }
  bool contains(std::size_t id) const { return index_.count(id) != 0; }

  /// Image of record `id`, rotated by `angle` degrees when given. If the
  /// rotated layout cannot be rasterized, the unrotated image is rotated at
  /// pixel level instead and `fell_back` is set.
  ChemImage render(std::size_t id, std::optional<double> angle = std::nullopt, bool* fell_back = nullptr) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw ConfigError("record " + std::to_string(id) + " was not encoded");
    const Entry& e = entries_[it->second];
    if (fell_back) *fell_back = false;
    if (schema_.kind == SchemaKind::Noise) {
      ChemImage img = make_noise_image(derive_seed(schema_.noise_seed, e.record_id), schema_.noise_density);
      return angle ? rotate_image_nearest(img, *angle) : img;
    }
    if (!angle) return e.image;
    try {
      return draw(e, center_and_rotate(e.coords, *angle));
    } catch (const RasterError&) {
      if (fell_back) *fell_back = true;
      return rotate_image_nearest(e.image, *angle);
    }
  }

  std::vector<ChemImage> render_all() const {
    std::vector<ChemImage> out;
    out.reserve(ids_.size());
    for (auto id : ids_) out.push_back(render(id));
    return out;
  }

 private:
  struct Entry {
    std::size_t record_id = 0;
    Molecule mol;
    Coordinates coords;
    std::optional<AtomAnnotations> ann;
    int truth_label = 0;
    ChemImage image;  // unrotated
  };

  Entry prepare(const LabeledRecord& rec) const {
    Entry e;
    e.record_id = rec.record_id;
    if (schema_.kind == SchemaKind::Truth) {
      const auto& v = rec.labels.at(truth_task_);
      if (!v) throw DataError("Truth schema: label missing");
      e.truth_label = *v > 0.5 ? 1 : 0;
    }
    e.mol = parse_smiles(rec.smiles);
    e.coords = generate_coords(e.mol);
    if (is_engineered(schema_.kind)) e.ann = annotate(e.mol);
    if (schema_.kind == SchemaKind::Noise) {
      // the molecule is only checked, so every schema keeps the same records
      (void)rasterize(e.mol, center_and_rotate(e.coords, 0.0), SchemaKind::Std);
    } else {
      e.image = draw(e, center_and_rotate(e.coords, 0.0));
    }
    return e;
  }

  ChemImage draw(const Entry& e, const Coordinates& xy) const {
    if (schema_.kind == SchemaKind::Truth) return make_truth_image(e.mol, xy, e.truth_label);
    return rasterize(e.mol, xy, schema_.kind, e.ann ? &*e.ann : nullptr, scramble_ ? &*scramble_ : nullptr);
  }

  ChannelSchema schema_;
  std::size_t truth_task_;
  std::optional<ScrambleMap> scramble_;
  std::vector<Entry> entries_;
  std::vector<std::size_t> ids_;
  std::unordered_map<std::size_t, std::size_t> index_;
  std::vector<EncodeSkip> skipped_;
};

}  // namespace chemimg
