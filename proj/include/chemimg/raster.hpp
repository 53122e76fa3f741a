#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chemimg/error.hpp"
#include "chemimg/layout.hpp"
#include "chemimg/molgraph.hpp"
#include "chemimg/percept.hpp"
#include "chemimg/random.hpp"

namespace chemimg {

inline constexpr std::size_t kImageSize = 80;
inline constexpr double kAngstromPerPixel = 0.5;

/// H x W x C float image, row-major with the channel index fastest.
struct ChemImage {
  std::size_t height = kImageSize;
  std::size_t width = kImageSize;
  std::size_t channels = 1;
  std::vector<float> data;

  ChemImage() = default;
  ChemImage(std::size_t h, std::size_t w, std::size_t c) : height(h), width(w), channels(c), data(h * w * c, 0.0f) {}
  explicit ChemImage(std::size_t c) : ChemImage(kImageSize, kImageSize, c) {}

  float& at(std::size_t row, std::size_t col, std::size_t ch = 0) { return data[(row * width + col) * channels + ch]; }
  float at(std::size_t row, std::size_t col, std::size_t ch = 0) const {
    return data[(row * width + col) * channels + ch];
  }
  std::size_t pixels() const { return height * width; }
  bool operator==(const ChemImage&) const = default;
};

enum class SchemaKind { Std, RedA, RedB, EngA, EngB, EngC, EngD, Noise, Truth, Scrambled };

inline constexpr std::array<SchemaKind, 10> kAllSchemas = {
    SchemaKind::Std,  SchemaKind::RedA, SchemaKind::RedB,  SchemaKind::EngA,  SchemaKind::EngB,
    SchemaKind::EngC, SchemaKind::EngD, SchemaKind::Noise, SchemaKind::Truth, SchemaKind::Scrambled};

inline std::string_view schema_name(SchemaKind k) {
  switch (k) {
    case SchemaKind::Std: return "std";
    case SchemaKind::RedA: return "reda";
    case SchemaKind::RedB: return "redb";
    case SchemaKind::EngA: return "enga";
    case SchemaKind::EngB: return "engb";
    case SchemaKind::EngC: return "engc";
    case SchemaKind::EngD: return "engd";
    case SchemaKind::Noise: return "noise";
    case SchemaKind::Truth: return "truth";
    case SchemaKind::Scrambled: return "scrambled";
  }
  return "?";
}

inline std::optional<SchemaKind> parse_schema(std::string_view name) {
  for (auto k : kAllSchemas) {
    if (schema_name(k) == name) return k;
  }
  return std::nullopt;
}

inline std::size_t schema_channels(SchemaKind k) {
  switch (k) {
    case SchemaKind::EngA:
    case SchemaKind::EngB:
    case SchemaKind::EngC:
    case SchemaKind::EngD: return 4;
    default: return 1;
  }
}

inline bool is_engineered(SchemaKind k) { return schema_channels(k) == 4; }

/// Schema plus the parameters of its random variants.
struct ChannelSchema {
  SchemaKind kind = SchemaKind::Std;
  double noise_density = 0.02;
  std::uint64_t noise_seed = 0;
  std::uint64_t scramble_seed = 0;
};

enum class RasterErrorKind { MoleculeTooLarge, AtomPixelCollision, MissingAnnotations };

class RasterError : public DataError {
 public:
  RasterError(RasterErrorKind kind, const std::string& what) : DataError(what), kind_(kind) {}
  RasterErrorKind kind() const { return kind_; }

 private:
  RasterErrorKind kind_;
};

struct Pixel {
  int row = 0;
  int col = 0;
  bool operator==(const Pixel&) const = default;
  auto operator<=>(const Pixel&) const = default;
};

/// Pixel holding a position given in Angstrom relative to the image centre.
inline Pixel pixel_of(Vec2 p) {
  const auto half = static_cast<double>(kImageSize / 2);
  // std::round rounds halves away from zero
  return {static_cast<int>(std::round(p.y / kAngstromPerPixel + half)),
          static_cast<int>(std::round(p.x / kAngstromPerPixel + half))};
}

/// Integer line from a to b, endpoints excluded.
inline std::vector<Pixel> line_pixels(Pixel a, Pixel b) {
  std::vector<Pixel> out;
  int x0 = a.col, y0 = a.row;
  const int x1 = b.col, y1 = b.row;
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
    if (x0 == x1 && y0 == y1) break;
    out.push_back({y0, x0});
  }
  return out;
}

/// Atom and bond pixel geometry shared by all molecule-derived schemas.
struct MoleculePixels {
  std::vector<Pixel> atoms;               // one per atom
  std::vector<std::vector<Pixel>> bonds;  // one list per bond, endpoints excluded
};

inline MoleculePixels molecule_pixels(const Molecule& mol, const Coordinates& coords) {
  MoleculePixels px;
  const int size = static_cast<int>(kImageSize);
  for (std::size_t i = 0; i < mol.atom_count(); ++i) {
    const Pixel p = pixel_of(coords[i]);
    if (p.row < 0 || p.row >= size || p.col < 0 || p.col >= size)
      throw RasterError(RasterErrorKind::MoleculeTooLarge,
                        "MoleculeTooLarge: atom " + std::to_string(i) + " falls outside the 40 A field");
    px.atoms.push_back(p);
  }
  std::vector<std::size_t> order(px.atoms.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return px.atoms[a] < px.atoms[b]; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (px.atoms[order[k]] == px.atoms[order[k - 1]])
      throw RasterError(RasterErrorKind::AtomPixelCollision, "AtomPixelCollision: atoms " +
                                                                 std::to_string(order[k - 1]) + " and " +
                                                                 std::to_string(order[k]) + " share a pixel");
  }
  for (const auto& b : mol.bonds) px.bonds.push_back(line_pixels(px.atoms[b.a], px.atoms[b.b]));
  return px;
}

/// Seeded bijection used by the Scrambled schema: index 0 is the bond marker,
/// indices 1..118 are atomic numbers. Values are distinct draws from [1, 120].
struct ScrambleMap {
  std::array<int, kMaxAtomicNumber + 1> values{};

  int bond() const { return values[0]; }
  int atom(int atomic_number) const { return values.at(static_cast<std::size_t>(atomic_number)); }
};

inline ScrambleMap scramble_map(std::uint64_t seed) {
  std::vector<int> pool(120);
  std::iota(pool.begin(), pool.end(), 1);
  Rng rng(seed);
  shuffle(pool, rng);
  ScrambleMap m;
  std::copy_n(pool.begin(), m.values.size(), m.values.begin());
  return m;
}

namespace detail {

inline void paint_bonds(ChemImage& img, const Molecule& mol, const MoleculePixels& px, std::size_t ch,
                        bool use_order, float marker) {
  for (std::size_t b = 0; b < mol.bond_count(); ++b) {
    const float v = use_order ? static_cast<float>(bond_order(mol.bonds[b])) : marker;
    for (const auto& p : px.bonds[b]) img.at(static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col), ch) = v;
  }
}

/// Writes one atom quantity per atom at its pixel in channel `ch`.
template <class F>
void paint_atoms(ChemImage& img, const MoleculePixels& px, std::size_t ch, F&& value) {
  for (std::size_t i = 0; i < px.atoms.size(); ++i) {
    img.at(static_cast<std::size_t>(px.atoms[i].row), static_cast<std::size_t>(px.atoms[i].col), ch) =
        static_cast<float>(value(i));
  }
}

/// Clears atom pixels of channel `ch` so bond values never leak under an atom.
inline void clear_atoms(ChemImage& img, const MoleculePixels& px, std::size_t ch) {
  paint_atoms(img, px, ch, [](std::size_t) { return 0.0; });
}

}  // namespace detail

/// Renders a molecule with centred coordinates into the schema's channels.
///
/// Atom pixels sit at round(x / 0.5 + 40), round(y / 0.5 + 40) (column, row);
/// bonds are integer lines between atom pixels and atoms win where they
/// overlap. Engineered schemas need `ann`; Scrambled needs `scramble`. Noise
/// and Truth have their own constructors below.
inline ChemImage rasterize(const Molecule& mol, const Coordinates& coords, SchemaKind schema,
                           const AtomAnnotations* ann = nullptr, const ScrambleMap* scramble = nullptr) {
  const MoleculePixels px = molecule_pixels(mol, coords);
  ChemImage img(schema_channels(schema));
  auto z = [&](std::size_t i) { return double(mol.atoms[i].atomic_number); };
  auto need_ann = [&] {
    if (!ann) throw RasterError(RasterErrorKind::MissingAnnotations, "engineered schema requires atom annotations");
  };
  auto charge = [&](std::size_t i) { return ann->partial_charge[i]; };
  auto val = [&](std::size_t i) { return double(ann->valence[i]); };
  auto hyb = [&](std::size_t i) { return double(static_cast<int>(ann->hybridization[i])); };

  switch (schema) {
    case SchemaKind::Std:
      detail::paint_bonds(img, mol, px, 0, false, 2.0f);
      detail::paint_atoms(img, px, 0, z);
      break;
    case SchemaKind::RedA:
      detail::paint_atoms(img, px, 0, [](std::size_t) { return 1.0; });
      break;
    case SchemaKind::RedB:
      detail::paint_bonds(img, mol, px, 0, false, 2.0f);
      detail::paint_atoms(img, px, 0, [](std::size_t) { return 1.0; });
      break;
    case SchemaKind::Scrambled: {
      if (!scramble) throw ConfigError("Scrambled schema requires a scramble map");
      detail::paint_bonds(img, mol, px, 0, false, static_cast<float>(scramble->bond()));
      detail::paint_atoms(img, px, 0, [&](std::size_t i) { return double(scramble->atom(mol.atoms[i].atomic_number)); });
      break;
    }
    case SchemaKind::EngA:
    case SchemaKind::EngB:
    case SchemaKind::EngC:
      need_ann();
      detail::paint_atoms(img, px, 0, z);
      detail::paint_bonds(img, mol, px, 1, true, 0.0f);
      detail::clear_atoms(img, px, 1);
      if (schema == SchemaKind::EngA) {
        detail::paint_atoms(img, px, 2, charge);
        detail::paint_atoms(img, px, 3, hyb);
      } else if (schema == SchemaKind::EngB) {
        detail::paint_atoms(img, px, 2, charge);
        detail::paint_atoms(img, px, 3, val);
      } else {
        detail::paint_atoms(img, px, 2, val);
        detail::paint_atoms(img, px, 3, hyb);
      }
      break;
    case SchemaKind::EngD:
      need_ann();
      detail::paint_bonds(img, mol, px, 0, false, 2.0f);
      detail::paint_atoms(img, px, 0, z);
      detail::paint_atoms(img, px, 1, charge);
      detail::paint_atoms(img, px, 2, val);
      detail::paint_atoms(img, px, 3, hyb);
      break;
    case SchemaKind::Noise:
    case SchemaKind::Truth:
      throw ConfigError("Noise and Truth images are built with make_noise_image / make_truth_image");
  }
  return img;
}

/// Scatters round(density * 6400) distinct pixels of `value` at seeded positions.
inline ChemImage make_noise_image(std::uint64_t seed, double density = 0.02, float value = 1.0f) {
  if (!(density > 0.0 && density < 1.0)) throw ConfigError("noise density must lie in (0, 1)");
  ChemImage img(1);
  const std::size_t n = img.pixels();
  const auto count = static_cast<std::size_t>(std::llround(density * double(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
    std::swap(idx[i], idx[j]);
    img.data[idx[i]] = value;
  }
  return img;
}

/// Molecule support (atoms and bonds) filled with the binary label.
inline ChemImage make_truth_image(const Molecule& mol, const Coordinates& coords, int label) {
  if (label != 0 && label != 1) throw ConfigError("Truth label must be 0 or 1");
  const MoleculePixels px = molecule_pixels(mol, coords);
  ChemImage img(1);
  const auto v = static_cast<float>(label);
  detail::paint_bonds(img, mol, px, 0, false, v);
  detail::paint_atoms(img, px, 0, [v](std::size_t) { return double(v); });
  return img;
}

namespace detail {
// std::round is an out-of-line libm call; in this per-pixel loop it was the
// dominant cost once the CPU had run wide vector code.
inline long round_half_away(double v) {
  return static_cast<long>(v >= 0.0 ? std::floor(v + 0.5) : std::ceil(v - 0.5));
}
}  // namespace detail

/// Nearest-neighbour rotation about the image centre, for images that have
/// no coordinates behind them (Noise) or when pixel-level augmentation is wanted.
inline ChemImage rotate_image_nearest(const ChemImage& src, double degrees) {
  ChemImage out(src.height, src.width, src.channels);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cy = static_cast<double>(src.height / 2), cx = static_cast<double>(src.width / 2);
  for (std::size_t r = 0; r < src.height; ++r) {
    for (std::size_t q = 0; q < src.width; ++q) {
      const double dy = double(r) - cy, dx = double(q) - cx;
      // inverse rotation maps the destination pixel back to its source
      const long sr = detail::round_half_away(cy + (-s * dx + c * dy));
      const long sq = detail::round_half_away(cx + (c * dx + s * dy));
      if (sr < 0 || sq < 0 || sr >= long(src.height) || sq >= long(src.width)) continue;
      for (std::size_t ch = 0; ch < src.channels; ++ch)
        out.at(r, q, ch) = src.at(static_cast<std::size_t>(sr), static_cast<std::size_t>(sq), ch);
    }
  }
  return out;
}

/// Pixels with a nonzero value in any channel.
inline std::vector<Pixel> nonzero_support(const ChemImage& img) {
  std::vector<Pixel> out;
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t q = 0; q < img.width; ++q) {
      for (std::size_t ch = 0; ch < img.channels; ++ch) {
        if (img.at(r, q, ch) != 0.0f) {
          out.push_back({int(r), int(q)});
          break;
        }
      }
    }
  }
  return out;
}

}  // namespace chemimg
