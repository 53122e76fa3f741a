#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chemimg/error.hpp"

namespace chemimg {

namespace detail {

inline constexpr std::array<std::string_view, 119> kElementSymbols = {
    "",   "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si",
    "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu",
    "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru",
    "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr",
    "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",
    "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac",
    "Th", "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf",
    "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

}  // namespace detail

inline constexpr int kMaxAtomicNumber = 118;

/// Atomic number for an element symbol, or 0 when the symbol is unknown.
inline int atomic_number_of(std::string_view symbol) {
  for (int z = 1; z <= kMaxAtomicNumber; ++z) {
    if (detail::kElementSymbols[static_cast<std::size_t>(z)] == symbol) return z;
  }
  return 0;
}

inline std::string_view element_symbol(int atomic_number) {
  if (atomic_number < 1 || atomic_number > kMaxAtomicNumber) return {};
  return detail::kElementSymbols[static_cast<std::size_t>(atomic_number)];
}

/// Standard valence used for implicit hydrogen assignment of organic-subset atoms.
inline std::optional<int> default_valence(int atomic_number) {
  switch (atomic_number) {
    case 5: return 3;   // B
    case 6: return 4;   // C
    case 7: return 3;   // N
    case 8: return 2;   // O
    case 15: return 3;  // P
    case 16: return 2;  // S
    case 9:
    case 17:
    case 35:
    case 53: return 1;  // halogens
    default: return std::nullopt;
  }
}

enum class BondKind { single, double_, triple, aromatic };

struct Atom {
  std::string element;
  int atomic_number = 0;
  int formal_charge = 0;
  int explicit_h = 0;
  int implicit_h = 0;
  bool is_aromatic = false;
  bool bracket = false;
  /// Set when the bond order sum exceeds the default valence.
  bool overvalent = false;
  std::size_t index = 0;
};

struct Bond {
  std::size_t a = 0;
  std::size_t b = 0;
  BondKind kind = BondKind::single;

  std::size_t other(std::size_t atom) const { return atom == a ? b : a; }
};

struct Neighbor {
  std::size_t atom;
  std::size_t bond;
};

class Molecule {
 public:
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::string name;

  std::size_t atom_count() const { return atoms.size(); }
  std::size_t bond_count() const { return bonds.size(); }

  /// Appends an atom and returns its index.
  std::size_t add_atom(Atom atom) {
    atom.index = atoms.size();
    atoms.push_back(std::move(atom));
    adjacency_.emplace_back();
    return atoms.size() - 1;
  }

  /// Adds a bond; rejects self loops and duplicate atom pairs.
  std::size_t add_bond(std::size_t a, std::size_t b, BondKind kind) {
    if (a >= atoms.size() || b >= atoms.size()) throw DataError("bond atom index out of range");
    if (a == b) throw DataError("bond joins an atom to itself");
    if (find_bond(a, b)) throw DataError("duplicate bond between atoms " + std::to_string(a) + " and " + std::to_string(b));
    bonds.push_back(Bond{a, b, kind});
    const std::size_t idx = bonds.size() - 1;
    adjacency_[a].push_back({b, idx});
    adjacency_[b].push_back({a, idx});
    return idx;
  }

  const std::vector<Neighbor>& neighbors(std::size_t atom) const { return adjacency_.at(atom); }
  std::size_t degree(std::size_t atom) const { return adjacency_.at(atom).size(); }

  std::optional<std::size_t> find_bond(std::size_t a, std::size_t b) const {
    for (const auto& n : adjacency_.at(a)) {
      if (n.atom == b) return n.bond;
    }
    return std::nullopt;
  }

  int total_formal_charge() const {
    int q = 0;
    for (const auto& at : atoms) q += at.formal_charge;
    return q;
  }

  int total_hydrogens(std::size_t atom) const { return atoms[atom].implicit_h + atoms[atom].explicit_h; }

 private:
  std::vector<std::vector<Neighbor>> adjacency_;
};

/// Structural equality: same atoms (all fields) and same bonds in the same order.
inline bool same_structure(const Molecule& x, const Molecule& y) {
  if (x.atoms.size() != y.atoms.size() || x.bonds.size() != y.bonds.size()) return false;
  for (std::size_t i = 0; i < x.atoms.size(); ++i) {
    const auto& a = x.atoms[i];
    const auto& b = y.atoms[i];
    if (a.element != b.element || a.atomic_number != b.atomic_number || a.formal_charge != b.formal_charge ||
        a.explicit_h != b.explicit_h || a.implicit_h != b.implicit_h || a.is_aromatic != b.is_aromatic ||
        a.bracket != b.bracket)
      return false;
  }
  for (std::size_t i = 0; i < x.bonds.size(); ++i) {
    if (x.bonds[i].a != y.bonds[i].a || x.bonds[i].b != y.bonds[i].b || x.bonds[i].kind != y.bonds[i].kind)
      return false;
  }
  return true;
}

/// Bonds whose removal disconnects the graph (Tarjan). Returns one flag per bond.
inline std::vector<bool> bridge_bonds(const Molecule& mol) {
  const std::size_t n = mol.atom_count();
  std::vector<bool> bridge(mol.bond_count(), false);
  std::vector<int> disc(n, -1), low(n, 0);
  int timer = 0;
  struct Frame {
    std::size_t atom;
    std::size_t via_bond;
    std::size_t next;
  };
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  for (std::size_t root = 0; root < n; ++root) {
    if (disc[root] >= 0) continue;
    std::vector<Frame> stack{{root, kNone, 0}};
    disc[root] = low[root] = timer++;
    while (!stack.empty()) {
      auto& f = stack.back();
      const auto& nbrs = mol.neighbors(f.atom);
      if (f.next < nbrs.size()) {
        const auto nb = nbrs[f.next++];
        if (nb.bond == f.via_bond) continue;
        if (disc[nb.atom] < 0) {
          disc[nb.atom] = low[nb.atom] = timer++;
          stack.push_back({nb.atom, nb.bond, 0});
        } else {
          low[f.atom] = std::min(low[f.atom], disc[nb.atom]);
        }
      } else {
        const Frame done = f;
        stack.pop_back();
        if (!stack.empty()) {
          auto& parent = stack.back();
          low[parent.atom] = std::min(low[parent.atom], low[done.atom]);
          if (low[done.atom] > disc[parent.atom]) bridge[done.via_bond] = true;
        }
      }
    }
  }
  return bridge;
}

enum class SmilesErrorKind { EmptyInput, UnclosedRing, UnbalancedParen, UnknownElement, UnexpectedCharacter };

inline std::string_view to_string(SmilesErrorKind k) {
  switch (k) {
    case SmilesErrorKind::EmptyInput: return "EmptyInput";
    case SmilesErrorKind::UnclosedRing: return "UnclosedRing";
    case SmilesErrorKind::UnbalancedParen: return "UnbalancedParen";
    case SmilesErrorKind::UnknownElement: return "UnknownElement";
    case SmilesErrorKind::UnexpectedCharacter: return "UnexpectedCharacter";
  }
  return "?";
}

class SmilesError : public DataError {
 public:
  SmilesError(SmilesErrorKind kind, std::size_t position, const std::string& detail)
      : DataError(std::string(to_string(kind)) + " at position " + std::to_string(position) + ": " + detail),
        kind_(kind),
        position_(position) {}

  SmilesErrorKind kind() const { return kind_; }
  std::size_t position() const { return position_; }

 private:
  SmilesErrorKind kind_;
  std::size_t position_;
};

namespace detail {

class SmilesParser {
 public:
  explicit SmilesParser(std::string_view text) : s_(text) {}

  Molecule run() {
    if (s_.empty()) fail(SmilesErrorKind::EmptyInput, 0, "empty SMILES");
    constexpr std::size_t none = static_cast<std::size_t>(-1);
    std::size_t prev = none;
    std::vector<std::pair<std::size_t, std::size_t>> branch_stack;  // (atom, '(' position)
    char pending_bond = 0;
    std::size_t pending_bond_pos = 0;

    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (c == '(') {
        if (prev == none) fail(SmilesErrorKind::UnexpectedCharacter, pos_, "branch without a preceding atom");
        branch_stack.emplace_back(prev, pos_);
        ++pos_;
      } else if (c == ')') {
        if (branch_stack.empty()) fail(SmilesErrorKind::UnbalancedParen, pos_, "')' without matching '('");
        if (pending_bond) fail(SmilesErrorKind::UnexpectedCharacter, pending_bond_pos, "bond symbol before ')'");
        prev = branch_stack.back().first;
        branch_stack.pop_back();
        ++pos_;
      } else if (is_bond_char(c)) {
        if (pending_bond) fail(SmilesErrorKind::UnexpectedCharacter, pos_, "consecutive bond symbols");
        pending_bond = c;
        pending_bond_pos = pos_;
        ++pos_;
      } else if (c == '.') {
        if (pending_bond) fail(SmilesErrorKind::UnexpectedCharacter, pending_bond_pos, "bond symbol before '.'");
        if (!branch_stack.empty()) fail(SmilesErrorKind::UnbalancedParen, branch_stack.back().second, "'.' inside branch");
        prev = none;
        ++pos_;
      } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '%') {
        if (prev == none) fail(SmilesErrorKind::UnexpectedCharacter, pos_, "ring closure without a preceding atom");
        const std::size_t at = pos_;
        const int label = read_ring_label();
        ring_closure(prev, label, at, bond_symbol(pending_bond));
        pending_bond = 0;
      } else {
        const std::size_t atom = read_atom();
        if (prev != none) {
          mol_.add_bond(prev, atom, bond_kind(bond_symbol(pending_bond), prev, atom));
        } else if (pending_bond) {
          fail(SmilesErrorKind::UnexpectedCharacter, pending_bond_pos, "bond symbol without a preceding atom");
        }
        pending_bond = 0;
        prev = atom;
      }
    }
    if (pending_bond) fail(SmilesErrorKind::UnexpectedCharacter, pending_bond_pos, "dangling bond symbol");
    if (!branch_stack.empty()) fail(SmilesErrorKind::UnbalancedParen, branch_stack.back().second, "unclosed '('");
    if (!open_rings_.empty()) {
      const auto& [label, ring] = *open_rings_.begin();
      fail(SmilesErrorKind::UnclosedRing, ring.position, "ring closure " + std::to_string(label) + " never closed");
    }
    if (mol_.atom_count() == 0) fail(SmilesErrorKind::EmptyInput, 0, "no atoms");
    demote_acyclic_aromatic_bonds();
    return std::move(mol_);
  }

 private:
  struct OpenRing {
    std::size_t atom;
    std::optional<char> bond;
    std::size_t position;
  };

  [[noreturn]] static void fail(SmilesErrorKind kind, std::size_t pos, const std::string& what) {
    throw SmilesError(kind, pos, what);
  }

  static std::optional<char> bond_symbol(char c) { return c ? std::optional<char>(c) : std::nullopt; }

  static bool is_bond_char(char c) { return c == '-' || c == '=' || c == '#' || c == ':' || c == '/' || c == '\\'; }

  BondKind bond_kind(std::optional<char> sym, std::size_t a, std::size_t b) const {
    const bool both_aromatic = mol_.atoms[a].is_aromatic && mol_.atoms[b].is_aromatic;
    if (!sym) return both_aromatic ? BondKind::aromatic : BondKind::single;
    switch (*sym) {
      case '=': return BondKind::double_;
      case '#': return BondKind::triple;
      case ':': return both_aromatic ? BondKind::aromatic : BondKind::single;
      default: return BondKind::single;  // '-', '/', '\'
    }
  }

  int read_ring_label() {
    if (s_[pos_] == '%') {
      if (pos_ + 2 >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_ + 1])) ||
          !std::isdigit(static_cast<unsigned char>(s_[pos_ + 2])))
        fail(SmilesErrorKind::UnexpectedCharacter, pos_, "'%' must be followed by two digits");
      const int label = (s_[pos_ + 1] - '0') * 10 + (s_[pos_ + 2] - '0');
      pos_ += 3;
      return label;
    }
    return s_[pos_++] - '0';
  }

  void ring_closure(std::size_t atom, int label, std::size_t at, std::optional<char> bond) {
    auto it = open_rings_.find(label);
    if (it == open_rings_.end()) {
      open_rings_.emplace(label, OpenRing{atom, bond, at});
      return;
    }
    const OpenRing ring = it->second;
    open_rings_.erase(it);
    if (ring.atom == atom) fail(SmilesErrorKind::UnexpectedCharacter, at, "ring closure to the same atom");
    if (ring.bond && bond && *ring.bond != *bond &&
        !((*ring.bond == '/' || *ring.bond == '\\') && (*bond == '/' || *bond == '\\')))
      fail(SmilesErrorKind::UnexpectedCharacter, at, "conflicting ring-closure bond symbols");
    const auto sym = bond ? bond : ring.bond;
    if (mol_.find_bond(ring.atom, atom)) fail(SmilesErrorKind::UnexpectedCharacter, at, "ring closure duplicates a bond");
    mol_.add_bond(ring.atom, atom, bond_kind(sym, ring.atom, atom));
  }

  std::size_t read_atom() {
    const char c = s_[pos_];
    if (c == '[') return read_bracket_atom();
    Atom atom;
    if (c == 'C' && peek(1) == 'l') {
      atom.element = "Cl";
      pos_ += 2;
    } else if (c == 'B' && peek(1) == 'r') {
      atom.element = "Br";
      pos_ += 2;
    } else if (c == 'B' || c == 'C' || c == 'N' || c == 'O' || c == 'P' || c == 'S' || c == 'F' || c == 'I') {
      atom.element = std::string(1, c);
      ++pos_;
    } else if (c == 'b' || c == 'c' || c == 'n' || c == 'o' || c == 'p' || c == 's') {
      atom.element = std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
      atom.is_aromatic = true;
      ++pos_;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '*') {
      fail(SmilesErrorKind::UnknownElement, pos_, std::string("unsupported atom symbol '") + c + "'");
    } else {
      fail(SmilesErrorKind::UnexpectedCharacter, pos_, std::string("unexpected character '") + c + "'");
    }
    atom.atomic_number = atomic_number_of(atom.element);
    return mol_.add_atom(std::move(atom));
  }

  char peek(std::size_t ahead) const { return pos_ + ahead < s_.size() ? s_[pos_ + ahead] : '\0'; }

  int read_number() {
    int v = 0;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) v = v * 10 + (s_[pos_++] - '0');
    return v;
  }

  std::size_t read_bracket_atom() {
    const std::size_t open = pos_++;
    read_number();  // isotope, ignored
    if (pos_ >= s_.size()) fail(SmilesErrorKind::UnexpectedCharacter, open, "unterminated bracket atom");
    Atom atom;
    atom.bracket = true;
    const std::size_t sym_pos = pos_;
    const char c = s_[pos_];
    if (std::islower(static_cast<unsigned char>(c))) {
      if (c == 's' && peek(1) == 'e') {
        atom.element = "Se";
        pos_ += 2;
      } else if (c == 'a' && peek(1) == 's') {
        atom.element = "As";
        pos_ += 2;
      } else if (c == 'b' || c == 'c' || c == 'n' || c == 'o' || c == 'p' || c == 's') {
        atom.element = std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        ++pos_;
      } else {
        fail(SmilesErrorKind::UnknownElement, sym_pos, std::string("unknown aromatic symbol '") + c + "'");
      }
      atom.is_aromatic = true;
    } else if (std::isupper(static_cast<unsigned char>(c))) {
      const char n = peek(1);
      if (std::islower(static_cast<unsigned char>(n)) && atomic_number_of(std::string{c, n}) != 0) {
        atom.element = std::string{c, n};
        pos_ += 2;
      } else {
        atom.element = std::string(1, c);
        ++pos_;
      }
    } else {
      fail(SmilesErrorKind::UnknownElement, sym_pos, "missing element symbol in bracket atom");
    }
    atom.atomic_number = atomic_number_of(atom.element);
    if (atom.atomic_number == 0) fail(SmilesErrorKind::UnknownElement, sym_pos, "unknown element '" + atom.element + "'");

    // chirality, ignored
    if (pos_ < s_.size() && s_[pos_] == '@') {
      while (pos_ < s_.size() && s_[pos_] == '@') ++pos_;
      for (std::string_view cls : {"TH", "AL", "SP", "TB", "OH"}) {
        if (s_.substr(pos_, 2) == cls) {
          pos_ += 2;
          read_number();
          break;
        }
      }
    }
    if (pos_ < s_.size() && s_[pos_] == 'H') {
      ++pos_;
      atom.explicit_h = 1;
      if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) atom.explicit_h = read_number();
    }
    if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) {
      const char sign = s_[pos_++];
      int magnitude = 1;
      if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
        magnitude = read_number();
      } else {
        while (pos_ < s_.size() && s_[pos_] == sign) {
          ++magnitude;
          ++pos_;
        }
      }
      atom.formal_charge = sign == '+' ? magnitude : -magnitude;
    }
    if (pos_ < s_.size() && s_[pos_] == ':') {
      ++pos_;
      read_number();  // atom class, ignored
    }
    if (pos_ >= s_.size() || s_[pos_] != ']') fail(SmilesErrorKind::UnexpectedCharacter, pos_, "expected ']'");
    ++pos_;
    return mol_.add_atom(std::move(atom));
  }

  // Aromatic bonds outside rings (e.g. the biaryl link in c1ccccc1c1ccccc1) are single bonds.
  void demote_acyclic_aromatic_bonds() {
    const auto bridge = bridge_bonds(mol_);
    for (std::size_t i = 0; i < mol_.bonds.size(); ++i) {
      if (bridge[i] && mol_.bonds[i].kind == BondKind::aromatic) mol_.bonds[i].kind = BondKind::single;
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  Molecule mol_;
  std::map<int, OpenRing> open_rings_;
};

}  // namespace detail

/// Numeric bond order; aromatic bonds count 1.5.
inline double bond_order(BondKind kind) {
  switch (kind) {
    case BondKind::single: return 1.0;
    case BondKind::double_: return 2.0;
    case BondKind::triple: return 3.0;
    case BondKind::aromatic: return 1.5;
  }
  return 0.0;
}

inline double bond_order(const Bond& bond) { return bond_order(bond.kind); }

/// Fills implicit hydrogen counts in place using the default-valence rule.
///
/// Bracket atoms carry their written hydrogen count and never receive implicit
/// ones. Organic-subset atoms get `valence - floor(sum of bond orders)`, floored
/// at zero; a negative remainder marks the atom over-valent (aromatic atoms may
/// exceed by one, as pyrrole-type donors do).
inline void assign_implicit_hydrogens(Molecule& mol) {
  for (auto& atom : mol.atoms) {
    atom.overvalent = false;
    if (atom.bracket) {
      atom.implicit_h = 0;
      continue;
    }
    const auto valence = default_valence(atom.atomic_number);
    if (!valence) {
      atom.implicit_h = 0;
      continue;
    }
    double order_sum = 0.0;
    for (const auto& nb : mol.neighbors(atom.index)) order_sum += bond_order(mol.bonds[nb.bond]);
    const int used = static_cast<int>(order_sum);  // floor, sum is non-negative
    const int free = *valence - std::abs(atom.formal_charge) - used;
    atom.implicit_h = std::max(free, 0);
    atom.overvalent = free < (atom.is_aromatic ? -1 : 0);
  }
}

/// Parses a SMILES string and assigns implicit hydrogens.
inline Molecule parse_smiles(std::string_view text) {
  Molecule mol = detail::SmilesParser(text).run();
  assign_implicit_hydrogens(mol);
  return mol;
}

/// Hill-order molecular formula (C, H, then alphabetical; alphabetical when no carbon).
inline std::string molecular_formula(const Molecule& mol) {
  std::map<std::string, int> counts;
  for (const auto& atom : mol.atoms) {
    ++counts[atom.element];
    const int h = atom.implicit_h + atom.explicit_h;
    if (h > 0) counts["H"] += h;
  }
  std::string out;
  auto emit = [&out](const std::string& el, int n) {
    out += el;
    if (n > 1) out += std::to_string(n);
  };
  const bool has_carbon = counts.count("C") > 0;
  if (has_carbon) {
    emit("C", counts["C"]);
    counts.erase("C");
    if (auto it = counts.find("H"); it != counts.end()) {
      emit("H", it->second);
      counts.erase(it);
    }
  }
  for (const auto& [el, n] : counts) emit(el, n);
  return out;
}

}  // namespace chemimg
