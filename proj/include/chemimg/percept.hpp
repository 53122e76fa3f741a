#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "chemimg/error.hpp"
#include "chemimg/molgraph.hpp"
#include "chemimg/peoe_table.hpp"

namespace chemimg {

/// Hybridization codes as stored in image channels.
enum class Hybridization : int { none = 0, sp = 1, sp2 = 2, sp3 = 3 };

inline std::string_view to_string(Hybridization h) {
  switch (h) {
    case Hybridization::none: return "none";
    case Hybridization::sp: return "sp";
    case Hybridization::sp2: return "sp2";
    case Hybridization::sp3: return "sp3";
  }
  return "?";
}

namespace detail {
inline void check_atom_index(const Molecule& mol, std::size_t atom) {
  if (atom >= mol.atom_count()) throw std::out_of_range("atom index " + std::to_string(atom) + " out of range");
}
}  // namespace detail

/// Number of explicit graph neighbours; implicit hydrogens are not counted.
inline int valence(const Molecule& mol, std::size_t atom) {
  detail::check_atom_index(mol, atom);
  return static_cast<int>(mol.degree(atom));
}

/// Rule-based hybridization from the bonds drawn at an atom.
inline Hybridization hybridization(const Molecule& mol, std::size_t atom) {
  detail::check_atom_index(mol, atom);
  int doubles = 0, triples = 0, aromatics = 0;
  for (const auto& nb : mol.neighbors(atom)) {
    switch (mol.bonds[nb.bond].kind) {
      case BondKind::double_: ++doubles; break;
      case BondKind::triple: ++triples; break;
      case BondKind::aromatic: ++aromatics; break;
      case BondKind::single: break;
    }
  }
  if (triples > 0 || doubles >= 2) return Hybridization::sp;
  if (doubles > 0 || aromatics > 0) return Hybridization::sp2;
  const auto& a = mol.atoms[atom];
  const bool connected = mol.degree(atom) > 0 || a.implicit_h > 0 || a.explicit_h > 0;
  switch (a.atomic_number) {
    case 5: case 6: case 7: case 8: case 14: case 15: case 16:  // B C N O Si P S
    case 9: case 17: case 35: case 53:                           // bonded halogens
      return connected ? Hybridization::sp3 : Hybridization::none;
    default: return Hybridization::none;
  }
}

/// Electronegativity polynomial chi(q) = a + b q + c q^2 for one atom type.
struct PeoeCoefficients {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double chi(double q) const { return a + q * (b + c * q); }
  /// Electronegativity of the cation, used to normalise transferred charge.
  double cation() const { return a + b + c; }
};

class MissingParams : public DataError {
 public:
  MissingParams(std::string element, std::string hyb)
      : DataError("no PEOE parameters for " + element + " " + hyb), element_(std::move(element)), hyb_(std::move(hyb)) {}
  const std::string& element() const { return element_; }
  const std::string& hybridization() const { return hyb_; }

 private:
  std::string element_;
  std::string hyb_;
};

/// Table of PEOE coefficients keyed by (element, hybridization). A `*` entry
/// matches any hybridization of that element.
class PeoeParams {
 public:
  /// Hydrogen cation electronegativity; replaces a+b+c when H donates charge.
  static constexpr double kHydrogenCation = 20.02;

  static PeoeParams parse(std::istream& in) {
    PeoeParams p;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream fields(line);
      std::string element, hyb;
      if (!(fields >> element)) continue;
      PeoeCoefficients co;
      if (!(fields >> hyb >> co.a >> co.b >> co.c))
        throw FormatError("PEOE table line " + std::to_string(lineno) + ": expected 'element hyb a b c'");
      if (hyb != "*" && hyb != "sp" && hyb != "sp2" && hyb != "sp3")
        throw FormatError("PEOE table line " + std::to_string(lineno) + ": bad hybridization '" + hyb + "'");
      if (!(co.a > 0.0)) throw FormatError("PEOE table line " + std::to_string(lineno) + ": a must be positive");
      p.table_[{element, hyb}] = co;
    }
    return p;
  }

  static PeoeParams load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open PEOE table " + path);
    return parse(in);
  }

  /// The table shipped with the library (data/peoe_params.txt).
  static const PeoeParams& defaults() {
    static const PeoeParams table = [] {
      std::istringstream in(detail::kPeoeParamsAsset);
      return parse(in);
    }();
    return table;
  }

  const PeoeCoefficients& lookup(const std::string& element, Hybridization hyb) const {
    const std::string h(to_string(hyb));
    if (auto it = table_.find({element, h}); it != table_.end()) return it->second;
    if (auto it = table_.find({element, "*"}); it != table_.end()) return it->second;
    throw MissingParams(element, h);
  }

  bool contains(const std::string& element, Hybridization hyb) const {
    return table_.count({element, std::string(to_string(hyb))}) > 0 || table_.count({element, "*"}) > 0;
  }

  std::size_t size() const { return table_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, PeoeCoefficients> table_;
};

struct GasteigerResult {
  /// Charge of each graph atom.
  std::vector<double> atom;
  /// Summed charge of the implicit/bracket hydrogens attached to each graph atom.
  std::vector<double> attached_h;
  /// Total |charge| moved in each damping step.
  std::vector<double> transfer_per_step;

  double total() const {
    double s = 0.0;
    for (double q : atom) s += q;
    for (double q : attached_h) s += q;
    return s;
  }
};

/// Partial equalization of orbital electronegativity over the molecular graph.
///
/// Hydrogens not present as graph nodes are expanded into pseudo-atoms for the
/// iteration. At damping step k every bond moves
/// (chi_acceptor - chi_donor) / chi_donor_cation * 0.5^k of charge from the
/// less to the more electronegative end, all chi evaluated at the start of the
/// step. Charge is conserved exactly up to rounding.
inline GasteigerResult gasteiger_charges(const Molecule& mol, const PeoeParams& params = PeoeParams::defaults(),
                                         int iterations = 6) {
  const std::size_t n_heavy = mol.atom_count();
  std::vector<PeoeCoefficients> coeff;
  std::vector<bool> is_h;
  std::vector<double> q;
  std::vector<std::size_t> owner;  // graph atom owning each pseudo hydrogen
  coeff.reserve(n_heavy);
  for (std::size_t i = 0; i < n_heavy; ++i) {
    const auto& a = mol.atoms[i];
    coeff.push_back(params.lookup(a.element, hybridization(mol, i)));
    is_h.push_back(a.atomic_number == 1);
    q.push_back(static_cast<double>(a.formal_charge));
    owner.push_back(i);
  }
  std::vector<std::pair<std::size_t, std::size_t>> links;
  for (const auto& b : mol.bonds) links.emplace_back(b.a, b.b);
  for (std::size_t i = 0; i < n_heavy; ++i) {
    const int nh = mol.total_hydrogens(i);
    if (nh == 0) continue;
    const auto& hc = params.lookup("H", Hybridization::none);
    for (int h = 0; h < nh; ++h) {
      coeff.push_back(hc);
      is_h.push_back(true);
      q.push_back(0.0);
      owner.push_back(i);
      links.emplace_back(i, coeff.size() - 1);
    }
  }

  GasteigerResult result;
  std::vector<double> chi(q.size());
  double damp = 1.0;
  for (int step = 1; step <= iterations; ++step) {
    damp *= 0.5;
    for (std::size_t i = 0; i < q.size(); ++i) chi[i] = coeff[i].chi(q[i]);
    double moved = 0.0;
    for (const auto& [x, y] : links) {
      if (chi[x] == chi[y]) continue;
      const std::size_t donor = chi[x] < chi[y] ? x : y;
      const std::size_t acceptor = donor == x ? y : x;
      const double cation = is_h[donor] ? PeoeParams::kHydrogenCation : coeff[donor].cation();
      const double dq = (chi[acceptor] - chi[donor]) / cation * damp;
      q[donor] += dq;
      q[acceptor] -= dq;
      moved += dq;
    }
    result.transfer_per_step.push_back(moved);
  }

  result.atom.assign(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(n_heavy));
  result.attached_h.assign(n_heavy, 0.0);
  for (std::size_t i = n_heavy; i < q.size(); ++i) result.attached_h[owner[i]] += q[i];
  return result;
}

/// Per-atom annotations written into augmented image channels.
struct AtomAnnotations {
  std::vector<int> valence;
  std::vector<Hybridization> hybridization;
  std::vector<double> partial_charge;
};

/// Computes valence, hybridization and Gasteiger charges for every atom.
/// Throws MissingParams when the table lacks an atom type.
inline AtomAnnotations annotate(const Molecule& mol, const PeoeParams& params = PeoeParams::defaults(),
                                int iterations = 6) {
  AtomAnnotations out;
  for (std::size_t i = 0; i < mol.atom_count(); ++i) {
    out.valence.push_back(valence(mol, i));
    out.hybridization.push_back(hybridization(mol, i));
  }
  out.partial_charge = gasteiger_charges(mol, params, iterations).atom;
  return out;
}

}  // namespace chemimg
