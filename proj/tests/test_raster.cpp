#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "chemimg/png.hpp"
#include "chemimg/raster.hpp"
#include "chemimg/tensor_io.hpp"
#include "corpus_oracle.hpp"

using namespace chemimg;
using chemimg::testing::kCorpus;

namespace {

struct Prepared {
  Molecule mol;
  Coordinates xy;
};

Prepared prepare(std::string_view smiles, double angle = 0.0) {
  Prepared p{parse_smiles(smiles), {}};
  p.xy = center_and_rotate(generate_coords(p.mol), angle);
  return p;
}

std::set<Pixel> support_set(const ChemImage& img) {
  const auto v = nonzero_support(img);
  return {v.begin(), v.end()};
}

std::set<float> distinct_nonzero(const ChemImage& img) {
  std::set<float> out;
  for (float v : img.data)
    if (v != 0.0f) out.insert(v);
  return out;
}

std::size_t count_value(const ChemImage& img, float value, std::size_t ch = 0) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) n += img.at(r, c, ch) == value;
  return n;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("chemimg_test_" + name);
}

// Minimal PNG reader for 8-bit greyscale files written without filtering.
std::vector<std::uint8_t> decode_gray_png(const std::vector<std::uint8_t>& png, std::size_t& w, std::size_t& h) {
  auto be32 = [&](std::size_t at) {
    return (std::uint32_t{png[at]} << 24) | (std::uint32_t{png[at + 1]} << 16) | (std::uint32_t{png[at + 2]} << 8) |
           std::uint32_t{png[at + 3]};
  };
  std::vector<std::uint8_t> idat;
  for (std::size_t at = 8; at + 12 <= png.size();) {
    const std::uint32_t len = be32(at);
    const std::string type(png.begin() + static_cast<std::ptrdiff_t>(at + 4), png.begin() + static_cast<std::ptrdiff_t>(at + 8));
    const auto crc = ::crc32(0L, png.data() + at + 4, len + 4);
    EXPECT_EQ(crc, be32(at + 8 + len)) << type;
    if (type == "IHDR") {
      w = be32(at + 8);
      h = be32(at + 12);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), png.begin() + static_cast<std::ptrdiff_t>(at + 8),
                  png.begin() + static_cast<std::ptrdiff_t>(at + 8 + len));
    }
    at += 12 + len;
  }
  std::vector<std::uint8_t> raw(h * (w + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  EXPECT_EQ(uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())), Z_OK);
  std::vector<std::uint8_t> out;
  for (std::size_t r = 0; r < h; ++r) {
    EXPECT_EQ(raw[r * (w + 1)], 0);
    out.insert(out.end(), raw.begin() + static_cast<std::ptrdiff_t>(r * (w + 1) + 1),
               raw.begin() + static_cast<std::ptrdiff_t>((r + 1) * (w + 1)));
  }
  return out;
}

}  // namespace

TEST(PixelOf, Mapping) {
  EXPECT_EQ(pixel_of({0.0, 0.0}), (Pixel{40, 40}));
  EXPECT_EQ(pixel_of({1.5, 0.0}), (Pixel{40, 43}));
  EXPECT_EQ(pixel_of({0.25, -0.25}), (Pixel{40, 41}));  // 40.5 -> 41, 39.5 -> 40 (half away from zero)
  EXPECT_EQ(pixel_of({-19.75, 19.5}), (Pixel{79, 1}));
}

TEST(LinePixels, ExcludesEndpoints) {
  EXPECT_TRUE(line_pixels({0, 0}, {0, 1}).empty());
  EXPECT_EQ(line_pixels({5, 5}, {5, 9}), (std::vector<Pixel>{{5, 6}, {5, 7}, {5, 8}}));
  EXPECT_EQ(line_pixels({0, 0}, {3, 3}), (std::vector<Pixel>{{1, 1}, {2, 2}}));
  // symmetric support
  for (int dr = -6; dr <= 6; ++dr) {
    for (int dc = -6; dc <= 6; ++dc) {
      const Pixel a{20, 20}, b{20 + dr, 20 + dc};
      const auto ab = line_pixels(a, b), ba = line_pixels(b, a);
      EXPECT_EQ(ab.size(), ba.size());
      EXPECT_EQ(ab.size(), std::size_t(std::max(std::max(std::abs(dr), std::abs(dc)) - 1, 0)));
    }
  }
}

TEST(Rasterize, MethaneStd) {
  const auto p = prepare("C");
  const auto img = rasterize(p.mol, p.xy, SchemaKind::Std);
  EXPECT_EQ(img.channels, 1u);
  EXPECT_EQ(nonzero_support(img), (std::vector<Pixel>{{40, 40}}));
  EXPECT_EQ(img.at(40, 40), 6.0f);
}

TEST(Rasterize, BenzeneStd) {
  const auto p = prepare("c1ccccc1");
  const auto img = rasterize(p.mol, p.xy, SchemaKind::Std);
  EXPECT_EQ(count_value(img, 6.0f), 6u);
  const auto values = distinct_nonzero(img);
  EXPECT_EQ(values, (std::set<float>{2.0f, 6.0f}));
  EXPECT_GT(count_value(img, 2.0f), 0u);
}

TEST(Rasterize, MethaneEngA) {
  const auto p = prepare("C");
  const auto ann = annotate(p.mol);
  const auto img = rasterize(p.mol, p.xy, SchemaKind::EngA, &ann);
  ASSERT_EQ(img.channels, 4u);
  EXPECT_EQ(img.at(40, 40, 0), 6.0f);
  EXPECT_EQ(count_value(img, 0.0f, 1), 6400u);
  EXPECT_NEAR(img.at(40, 40, 2), -0.0776, 5e-3);
  EXPECT_EQ(img.at(40, 40, 3), 3.0f);
  EXPECT_EQ(nonzero_support(img).size(), 1u);
}

TEST(Rasterize, EngChannelsByAtomAndBond) {
  const auto p = prepare("CC#N");
  const auto ann = annotate(p.mol);
  const auto px = molecule_pixels(p.mol, p.xy);
  for (auto schema : {SchemaKind::EngA, SchemaKind::EngB, SchemaKind::EngC, SchemaKind::EngD}) {
    const auto img = rasterize(p.mol, p.xy, schema, &ann);
    std::set<Pixel> atoms(px.atoms.begin(), px.atoms.end());
    for (std::size_t r = 0; r < kImageSize; ++r) {
      for (std::size_t c = 0; c < kImageSize; ++c) {
        const Pixel here{int(r), int(c)};
        const bool is_atom = atoms.count(here) > 0;
        for (std::size_t ch = 0; ch < 4; ++ch) {
          const bool bond_channel = schema != SchemaKind::EngD && ch == 1;
          const bool combined = schema == SchemaKind::EngD && ch == 0;
          if (!is_atom && !bond_channel && !combined) {
            EXPECT_EQ(img.at(r, c, ch), 0.0f) << schema_name(schema) << " ch " << ch;
          }
          if (is_atom && bond_channel) {
            EXPECT_EQ(img.at(r, c, ch), 0.0f);
          }
        }
      }
    }
    // triple bond pixels carry 3 in the bond-order channel; EngD marks them 2
    for (const auto& q : px.bonds[1]) {
      const auto r = std::size_t(q.row), c = std::size_t(q.col);
      EXPECT_EQ(img.at(r, c, schema == SchemaKind::EngD ? 0 : 1), schema == SchemaKind::EngD ? 2.0f : 3.0f);
    }
  }
  const auto a = rasterize(p.mol, p.xy, SchemaKind::EngA, &ann);
  const auto b = rasterize(p.mol, p.xy, SchemaKind::EngB, &ann);
  const auto c = rasterize(p.mol, p.xy, SchemaKind::EngC, &ann);
  const auto d = rasterize(p.mol, p.xy, SchemaKind::EngD, &ann);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto r = std::size_t(px.atoms[i].row), q = std::size_t(px.atoms[i].col);
    EXPECT_EQ(a.at(r, q, 2), float(ann.partial_charge[i]));
    EXPECT_EQ(a.at(r, q, 3), float(int(ann.hybridization[i])));
    EXPECT_EQ(b.at(r, q, 3), float(ann.valence[i]));
    EXPECT_EQ(c.at(r, q, 2), float(ann.valence[i]));
    EXPECT_EQ(d.at(r, q, 0), float(p.mol.atoms[i].atomic_number));
    EXPECT_EQ(d.at(r, q, 1), float(ann.partial_charge[i]));
  }
}

TEST(Rasterize, AromaticBondOrderIsOneAndAHalf) {
  const auto p = prepare("c1ccccc1");
  const auto ann = annotate(p.mol);
  const auto img = rasterize(p.mol, p.xy, SchemaKind::EngA, &ann);
  std::set<float> bond_values;
  for (std::size_t i = 0; i < img.pixels(); ++i)
    if (img.data[i * 4 + 1] != 0.0f) bond_values.insert(img.data[i * 4 + 1]);
  EXPECT_EQ(bond_values, (std::set<float>{1.5f}));
}

TEST(Rasterize, EngineeredNeedsAnnotations) {
  const auto p = prepare("CC");
  try {
    rasterize(p.mol, p.xy, SchemaKind::EngB);
    FAIL();
  } catch (const RasterError& e) {
    EXPECT_EQ(e.kind(), RasterErrorKind::MissingAnnotations);
  }
  EXPECT_THROW(rasterize(p.mol, p.xy, SchemaKind::Scrambled), ConfigError);
  EXPECT_THROW(rasterize(p.mol, p.xy, SchemaKind::Noise), ConfigError);
}

TEST(Rasterize, LongChainTooLarge) {
  // 40 carbons zig-zag to roughly 50 A
  const auto p = prepare(std::string(40, 'C'));
  try {
    rasterize(p.mol, p.xy, SchemaKind::Std);
    FAIL();
  } catch (const RasterError& e) {
    EXPECT_EQ(e.kind(), RasterErrorKind::MoleculeTooLarge);
  }
}

TEST(Rasterize, AtomPixelCollision) {
  auto mol = parse_smiles("C.C");
  Coordinates xy;
  xy.xy = {{0.0, 0.0}, {0.2, 0.1}};
  try {
    rasterize(mol, xy, SchemaKind::Std);
    FAIL();
  } catch (const RasterError& e) {
    EXPECT_EQ(e.kind(), RasterErrorKind::AtomPixelCollision);
  }
}

TEST(Noise, ExactCounts) {
  EXPECT_EQ(nonzero_support(make_noise_image(3, 1.0 / 6400.0)).size(), 1u);
  const auto img = make_noise_image(3, 0.02);
  EXPECT_EQ(nonzero_support(img).size(), 128u);
  EXPECT_EQ(distinct_nonzero(img), (std::set<float>{1.0f}));
  EXPECT_EQ(make_noise_image(3, 0.02), img);
  EXPECT_NE(make_noise_image(4, 0.02), img);
  EXPECT_EQ(nonzero_support(make_noise_image(9, 0.5)).size(), 3200u);
  EXPECT_THROW(make_noise_image(1, 0.0), ConfigError);
  EXPECT_THROW(make_noise_image(1, 1.0), ConfigError);
}

TEST(Truth, SupportAndValues) {
  const auto p = prepare("c1ccccc1");
  const auto one = make_truth_image(p.mol, p.xy, 1);
  EXPECT_EQ(support_set(one), support_set(rasterize(p.mol, p.xy, SchemaKind::RedB)));
  EXPECT_EQ(distinct_nonzero(one), (std::set<float>{1.0f}));
  EXPECT_TRUE(nonzero_support(make_truth_image(p.mol, p.xy, 0)).empty());
  const auto m = prepare("C");
  EXPECT_EQ(nonzero_support(make_truth_image(m.mol, m.xy, 1)), (std::vector<Pixel>{{40, 40}}));
  EXPECT_THROW(make_truth_image(m.mol, m.xy, 2), ConfigError);
}

TEST(Scramble, BijectionAndDeterminism) {
  for (std::uint64_t seed : {0ull, 1ull, 42ull, 123456789ull}) {
    const auto m = scramble_map(seed);
    std::set<int> seen(m.values.begin(), m.values.end());
    EXPECT_EQ(seen.size(), m.values.size());
    for (int v : m.values) {
      EXPECT_GE(v, 1);
      EXPECT_LE(v, 120);
    }
    EXPECT_EQ(scramble_map(seed).values, m.values);
  }
  EXPECT_NE(scramble_map(1).values, scramble_map(2).values);
}

TEST(Scramble, BenzeneUsesMappedValues) {
  const auto p = prepare("c1ccccc1");
  const auto m = scramble_map(17);
  const auto img = rasterize(p.mol, p.xy, SchemaKind::Scrambled, nullptr, &m);
  EXPECT_EQ(count_value(img, float(m.atom(6))), 6u);
  EXPECT_EQ(distinct_nonzero(img), (std::set<float>{float(m.atom(6)), float(m.bond())}));
}

TEST(Corpus, SchemaSupportEquality) {
  const auto m = scramble_map(5);
  for (const auto& e : kCorpus) {
    const auto p = prepare(e.smiles);
    const auto std_img = rasterize(p.mol, p.xy, SchemaKind::Std);
    const auto support = support_set(std_img);
    EXPECT_EQ(support_set(rasterize(p.mol, p.xy, SchemaKind::RedB)), support) << e.smiles;
    EXPECT_EQ(support_set(make_truth_image(p.mol, p.xy, 1)), support) << e.smiles;
    EXPECT_EQ(support_set(rasterize(p.mol, p.xy, SchemaKind::Scrambled, nullptr, &m)), support) << e.smiles;
    const auto px = molecule_pixels(p.mol, p.xy);
    EXPECT_EQ(support_set(rasterize(p.mol, p.xy, SchemaKind::RedA)), std::set<Pixel>(px.atoms.begin(), px.atoms.end()))
        << e.smiles;
    for (const auto& q : support) {
      bool on_geometry = std::find(px.atoms.begin(), px.atoms.end(), q) != px.atoms.end();
      for (const auto& line : px.bonds) on_geometry |= std::find(line.begin(), line.end(), q) != line.end();
      EXPECT_TRUE(on_geometry) << e.smiles;
    }
  }
}

TEST(Corpus, ValueCountOrdering) {
  for (const auto& e : kCorpus) {
    const auto p = prepare(e.smiles);
    const auto a = distinct_nonzero(rasterize(p.mol, p.xy, SchemaKind::RedA)).size();
    const auto b = distinct_nonzero(rasterize(p.mol, p.xy, SchemaKind::RedB)).size();
    const auto s = distinct_nonzero(rasterize(p.mol, p.xy, SchemaKind::Std)).size();
    std::set<int> elements;
    for (const auto& atom : p.mol.atoms) elements.insert(atom.atomic_number);
    const std::size_t bonds = p.mol.bond_count() > 0 ? 1 : 0;
    EXPECT_EQ(a, 1u);
    EXPECT_EQ(b, 1 + bonds) << e.smiles;
    EXPECT_EQ(s, elements.size() + bonds) << e.smiles;
    EXPECT_LE(a, b);
    EXPECT_LE(b, s);
  }
}

TEST(Corpus, EngineeredValuesFinite) {
  for (const auto& e : kCorpus) {
    const auto p = prepare(e.smiles);
    const auto ann = annotate(p.mol);
    for (auto schema : {SchemaKind::EngA, SchemaKind::EngB, SchemaKind::EngC, SchemaKind::EngD}) {
      const auto img = rasterize(p.mol, p.xy, schema, &ann);
      for (float v : img.data) ASSERT_TRUE(std::isfinite(v)) << e.smiles;
    }
  }
}

TEST(Corpus, RotationKeepsAtomPixels) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> angle(0.0, 180.0);
  for (const auto& e : kCorpus) {
    for (int trial = 0; trial < 8; ++trial) {
      const auto rot = prepare(e.smiles, angle(rng));
      EXPECT_EQ(count_value(rasterize(rot.mol, rot.xy, SchemaKind::RedB), 1.0f), rot.mol.atom_count()) << e.smiles;
    }
  }
}

// A 3-pixel bond loses an interior pixel at some angles, so the bond count is
// compared over the whole corpus rather than per molecule.
TEST(Corpus, RotationKeepsBondPixelTotal) {
  std::vector<Prepared> corpus;
  for (const auto& e : kCorpus) corpus.push_back(prepare(e.smiles));
  auto bond_pixels = [&](double degrees) {
    std::size_t n = 0;
    for (const auto& p : corpus) n += count_value(rasterize(p.mol, center_and_rotate(p.xy, degrees), SchemaKind::RedB), 2.0f);
    return double(n);
  };
  const double base = bond_pixels(0.0);
  ASSERT_GT(base, 0.0);
  for (double degrees = 5.0; degrees < 180.0; degrees += 5.0) {
    EXPECT_LE(std::abs(bond_pixels(degrees) - base), 0.15 * base) << degrees;
  }
}

TEST(RotateImage, NearestNeighbour) {
  const auto noise = make_noise_image(8, 0.02);
  EXPECT_EQ(rotate_image_nearest(noise, 0.0), noise);
  const auto quarter = rotate_image_nearest(noise, 90.0);
  EXPECT_EQ(distinct_nonzero(quarter), (std::set<float>{1.0f}));
  // a 90 degree turn about pixel (40, 40) is a permutation of all pixels that stay in range
  EXPECT_GE(nonzero_support(quarter).size(), 120u);
  EXPECT_LE(nonzero_support(quarter).size(), 128u);
  const auto full = rotate_image_nearest(rotate_image_nearest(quarter, 90.0), 180.0);
  for (const auto& q : nonzero_support(full)) EXPECT_EQ(noise.at(std::size_t(q.row), std::size_t(q.col)), 1.0f);
}

TEST(TensorFile, HeaderLayoutAndSize) {
  const auto p = prepare("C");
  const std::vector<ChemImage> images{rasterize(p.mol, p.xy, SchemaKind::Std)};
  std::ostringstream out;
  write_tensor_stream(out, images);
  const std::string bytes = out.str();
  ASSERT_EQ(bytes.size(), kCimgHeaderBytes + 4 * 4 + 80 * 80 * 1 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "CIMG");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 1);
  EXPECT_EQ(bytes[6], 1);
  EXPECT_EQ(bytes[7], 0);
  const std::uint32_t expected[5] = {4, 1, 80, 80, 1};
  for (int i = 0; i < 5; ++i) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= std::uint32_t(static_cast<unsigned char>(bytes[std::size_t(8 + 4 * i + k)])) << (8 * k);
    EXPECT_EQ(v, expected[i]);
  }
  // the carbon pixel: 6.0f = 0x40C00000 little-endian
  const std::size_t at = 28 + (40 * 80 + 40) * 4;
  EXPECT_EQ(static_cast<unsigned char>(bytes[at + 3]), 0x40);
  EXPECT_EQ(static_cast<unsigned char>(bytes[at + 2]), 0xC0);
}

TEST(TensorFile, RoundTripRandomTensors) {
  std::mt19937 rng(99);
  std::uniform_real_distribution<float> value(-1e6f, 1e6f);
  for (std::size_t channels : {1u, 4u}) {
    std::vector<ChemImage> images(3, ChemImage(channels));
    for (auto& img : images)
      for (auto& v : img.data) v = value(rng);
    images[1].data[5] = -0.0f;
    images[2].data[7] = std::numeric_limits<float>::denorm_min();
    const auto path = temp_file("roundtrip.cimg").string();
    write_tensor_file(images, path);
    const auto back = read_tensor_file(path);
    ASSERT_EQ(back.size(), images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      ASSERT_EQ(back[i].channels, channels);
      EXPECT_EQ(std::memcmp(back[i].data.data(), images[i].data.data(), images[i].data.size() * 4), 0);
    }
    std::filesystem::remove(path);
  }
}

TEST(TensorFile, EmptyList) {
  std::stringstream buf;
  write_tensor_stream(buf, {});
  EXPECT_EQ(buf.str().size(), 28u);
  EXPECT_TRUE(read_tensor_stream(buf).empty());
}

TEST(TensorFile, Errors) {
  std::stringstream buf;
  write_tensor_stream(buf, {ChemImage(1)});
  std::string bytes = buf.str();

  auto read_bytes = [](const std::string& b) {
    std::istringstream in(b);
    return read_tensor_stream(in);
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(read_bytes(bad_magic), FormatError);
  std::string bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(read_bytes(bad_version), FormatError);
  std::string bad_rank = bytes;
  bad_rank[8] = 3;
  EXPECT_THROW(read_bytes(bad_rank), FormatError);
  EXPECT_THROW(read_bytes(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(read_bytes(bytes + "x"), FormatError);
  EXPECT_THROW(read_bytes("CIM"), FormatError);

  std::ostringstream out;
  EXPECT_THROW(write_tensor_stream(out, {ChemImage(1), ChemImage(4)}), ShapeMismatch);
  EXPECT_THROW(read_tensor_file("/nonexistent/dir/file.cimg"), IoError);
  EXPECT_THROW(write_tensor_file({}, "/nonexistent/dir/file.cimg"), IoError);
}

TEST(Png, AllZeroIsBlack) {
  const auto gray = channel_to_gray(ChemImage(1), 0);
  EXPECT_EQ(std::count(gray.begin(), gray.end(), 0), 6400);
}

TEST(Png, MethaneHasOneWhitePixel) {
  const auto p = prepare("C");
  const auto img = rasterize(p.mol, p.xy, SchemaKind::Std);
  const auto path = temp_file("methane.png").string();
  export_png_preview(img, path, 0);
  std::ifstream in(path, std::ios::binary);
  const std::vector<std::uint8_t> png((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ASSERT_GT(png.size(), 8u);
  EXPECT_EQ(png[1], 'P');
  std::size_t w = 0, h = 0;
  const auto gray = decode_gray_png(png, w, h);
  EXPECT_EQ(w, 80u);
  EXPECT_EQ(h, 80u);
  ASSERT_EQ(gray.size(), 6400u);
  EXPECT_EQ(std::count_if(gray.begin(), gray.end(), [](std::uint8_t v) { return v != 0; }), 1);
  EXPECT_EQ(gray[40 * 80 + 40], 255);
  std::filesystem::remove(path);
}

TEST(Png, ChargeChannelNormalisation) {
  const auto p = prepare("CCO");
  const auto ann = annotate(p.mol);
  const auto img = rasterize(p.mol, p.xy, SchemaKind::EngA, &ann);
  const auto gray = channel_to_gray(img, 2);
  const auto px = molecule_pixels(p.mol, p.xy);
  // oxygen carries the most negative charge, the hydroxyl-bearing carbon the most positive
  EXPECT_EQ(gray[std::size_t(px.atoms[2].row * 80 + px.atoms[2].col)], 0);
  EXPECT_EQ(gray[std::size_t(px.atoms[1].row * 80 + px.atoms[1].col)], 255);
  EXPECT_THROW(channel_to_gray(img, 4), ConfigError);
  EXPECT_THROW(export_png_preview(img, "/nonexistent/dir/x.png", 0), IoError);
}
