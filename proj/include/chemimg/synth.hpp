#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <string>
#include <string_view>

#include "chemimg/dataset.hpp"
#include "chemimg/layout.hpp"
#include "chemimg/molgraph.hpp"
#include "chemimg/random.hpp"
#include "chemimg/raster.hpp"

namespace chemimg {

namespace detail {

// Linear SMILES fragments joined head to tail. Aromatic and aliphatic rings
// use closure digit 1 and are closed within the fragment.
inline constexpr std::array<std::string_view, 12> kPieces = {
    "C", "CC", "C(C)", "c1ccccc1", "C1CCCCC1", "C(F)", "C(Cl)", "CCC", "O", "N", "C(=O)", "C=C"};

// Unbranched carbon skeleton pieces: no atom ends up with three or more
// terminal neighbours, so the functional group below has a unique shape.
inline constexpr std::array<std::string_view, 5> kSkeletonPieces = {"C", "CC", "CCC", "c1ccccc1", "C1CCCCC1"};

template <std::size_t N>
std::string join_pieces(Rng& rng, const std::array<std::string_view, N>& pieces, std::size_t min_len,
                        std::size_t max_len) {
  const std::size_t len = min_len + static_cast<std::size_t>(uniform_index(rng, max_len - min_len + 1));
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += pieces[static_cast<std::size_t>(uniform_index(rng, N))];
  return s;
}

/// True when the molecule parses, lays out and rasterizes upright.
inline bool renderable(const std::string& smiles) {
  try {
    const Molecule mol = parse_smiles(smiles);
    (void)rasterize(mol, center_and_rotate(generate_coords(mol), 0.0), SchemaKind::Std);
    return true;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace detail

/// A random molecule from the fragment grammar: 1 to 5 pieces, at least one
/// carbon. Draws again until the result renders.
inline std::string random_toy_smiles(Rng& rng) {
  for (;;) {
    std::string s = detail::join_pieces(rng, detail::kPieces, 1, 5);
    if (s.find_first_of("Cc") == std::string::npos) continue;
    if (detail::renderable(s)) return s;
  }
}

/// n distinct grammar molecules with one binary task "label" ~ Bernoulli(0.5).
inline Dataset random_label_set(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.tasks = {"label"};
  std::set<std::string> seen;
  while (ds.records.size() < n) {
    std::string s = random_toy_smiles(rng);
    if (!seen.insert(s).second) continue;
    LabeledRecord rec;
    rec.smiles = std::move(s);
    rec.labels = {double(rng() & 1)};
    rec.record_id = ds.records.size();
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

/// Binary task "sulfonic": positives end in a sulfonic acid S(=O)(=O)O. Of
/// the negatives, `decoy_fraction` end in a tert-butyl C(C)(C)C, which has the
/// same shape but only carbon, and the rest end in a methyl. Skeletons of 1 to
/// 4 unbranched pieces may recur with different end groups; whole molecules
/// are distinct. Positives and negatives are equally likely.
inline Dataset functional_group_set(std::size_t n, std::uint64_t seed, double decoy_fraction = 0.0) {
  if (!(decoy_fraction >= 0.0 && decoy_fraction <= 1.0)) throw ConfigError("decoy fraction must lie in [0, 1]");
  Rng rng(seed);
  Dataset ds;
  ds.tasks = {"sulfonic"};
  std::set<std::string> seen;
  while (ds.records.size() < n) {
    const std::string skel = detail::join_pieces(rng, detail::kSkeletonPieces, 1, 4);
    const bool positive = (rng() & 1) != 0;
    const bool decoy = !positive && uniform_real(rng) < decoy_fraction;
    std::string smiles = skel + (positive ? "S(=O)(=O)O" : decoy ? "C(C)(C)C" : "C");
    if (seen.count(smiles) || !detail::renderable(smiles)) continue;
    seen.insert(smiles);
    LabeledRecord rec;
    rec.smiles = std::move(smiles);
    rec.labels = {positive ? 1.0 : 0.0};
    rec.record_id = ds.records.size();
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

/// Writes smiles plus one column per task; missing labels are empty cells.
inline void write_csv(const Dataset& ds, std::ostream& out) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  out << "smiles";
  for (const auto& t : ds.tasks) out << ',' << quote(t);
  out << '\n';
  for (const auto& r : ds.records) {
    out << quote(r.smiles);
    for (const auto& v : r.labels) {
      out << ',';
      if (!v) continue;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", *v);
      out << buf;
    }
    out << '\n';
  }
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_csv(ds, out);
}

}  // namespace chemimg
