#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <set>
#include <vector>

#include "chemimg/error.hpp"
#include "chemimg/molgraph.hpp"

namespace chemimg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;
  double norm() const { return std::hypot(x, y); }
  double angle() const { return std::atan2(y, x); }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

inline Vec2 polar(double radius, double theta) { return {radius * std::cos(theta), radius * std::sin(theta)}; }

/// Rotates `p` by `theta` radians about `pivot`.
inline Vec2 rotate_about(Vec2 p, Vec2 pivot, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  const Vec2 d = p - pivot;
  return pivot + Vec2{c * d.x - s * d.y, s * d.x + c * d.y};
}

/// Per-atom 2D positions in Angstrom, indexed like Molecule::atoms.
struct Coordinates {
  std::vector<Vec2> xy;

  std::size_t size() const { return xy.size(); }
  const Vec2& operator[](std::size_t i) const { return xy[i]; }
  Vec2& operator[](std::size_t i) { return xy[i]; }
  bool operator==(const Coordinates&) const = default;
};

class LayoutOverlap : public DataError {
 public:
  LayoutOverlap(std::size_t a, std::size_t b, double d)
      : DataError("LayoutOverlap: atoms " + std::to_string(a) + " and " + std::to_string(b) + " are " +
                  std::to_string(d) + " A apart"),
        a_(a),
        b_(b) {}
  std::size_t first() const { return a_; }
  std::size_t second() const { return b_; }

 private:
  std::size_t a_, b_;
};

struct LayoutOptions {
  double bond_length = 1.5;
  /// Closest allowed approach of two non-bonded atoms.
  double min_separation = 0.9;
  /// Horizontal gap between disconnected fragments.
  double fragment_gap = 3.0;
  /// Branch rotation steps tried when resolving collisions, degrees.
  std::array<double, 6> perturbations = {10.0, -10.0, 20.0, -20.0, 30.0, -30.0};
  double max_perturbation = 30.0;
};

/// Smallest set of ring cycles spanning the cycle space; each ring lists atoms in cycle order.
inline std::vector<std::vector<std::size_t>> find_rings(const Molecule& mol) {
  const std::size_t n = mol.atom_count();
  const std::size_t m = mol.bond_count();
  const auto bridge = bridge_bonds(mol);

  // shortest cycle through each ring bond
  struct Candidate {
    std::vector<std::size_t> atoms;
    std::vector<std::uint64_t> edges;
  };
  const std::size_t words = (m + 63) / 64;
  std::vector<Candidate> cands;
  std::set<std::vector<std::uint64_t>> seen;
  for (std::size_t e = 0; e < m; ++e) {
    if (bridge[e]) continue;
    const std::size_t src = mol.bonds[e].a, dst = mol.bonds[e].b;
    std::vector<std::size_t> prev(n, n), via(n, m);
    std::deque<std::size_t> queue{src};
    prev[src] = src;
    while (!queue.empty() && prev[dst] == n) {
      const std::size_t v = queue.front();
      queue.pop_front();
      for (const auto& nb : mol.neighbors(v)) {
        if (nb.bond == e || prev[nb.atom] != n) continue;
        prev[nb.atom] = v;
        via[nb.atom] = nb.bond;
        queue.push_back(nb.atom);
      }
    }
    if (prev[dst] == n) continue;
    Candidate c;
    c.edges.assign(words, 0);
    c.edges[e / 64] |= std::uint64_t{1} << (e % 64);
    for (std::size_t v = dst; v != src; v = prev[v]) {
      c.atoms.push_back(v);
      c.edges[via[v] / 64] |= std::uint64_t{1} << (via[v] % 64);
    }
    c.atoms.push_back(src);
    std::reverse(c.atoms.begin(), c.atoms.end());
    if (seen.insert(c.edges).second) cands.push_back(std::move(c));
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.atoms.size() < b.atoms.size(); });

  // keep cycles that are independent over GF(2)
  std::vector<std::vector<std::uint64_t>> basis;
  std::vector<std::size_t> pivots;
  std::vector<std::vector<std::size_t>> rings;
  for (auto& c : cands) {
    auto v = c.edges;
    for (std::size_t k = 0; k < basis.size(); ++k) {
      if (v[pivots[k] / 64] >> (pivots[k] % 64) & 1U) {
        for (std::size_t w = 0; w < words; ++w) v[w] ^= basis[k][w];
      }
    }
    std::optional<std::size_t> pivot;
    for (std::size_t w = 0; w < words && !pivot; ++w) {
      if (v[w] != 0) pivot = w * 64 + static_cast<std::size_t>(std::countr_zero(v[w]));
    }
    if (!pivot) continue;
    // keep the basis reduced so the pivot test above stays valid
    for (auto& row : basis) {
      if (row[*pivot / 64] >> (*pivot % 64) & 1U) {
        for (std::size_t w = 0; w < words; ++w) row[w] ^= v[w];
      }
    }
    basis.push_back(std::move(v));
    pivots.push_back(*pivot);
    rings.push_back(std::move(c.atoms));
  }
  return rings;
}

namespace detail {

class LayoutBuilder {
 public:
  LayoutBuilder(const Molecule& mol, const LayoutOptions& opt)
      : mol_(mol), opt_(opt), rings_(find_rings(mol)), pos_(mol.atom_count()), placed_(mol.atom_count(), false),
        turn_(mol.atom_count(), 1) {
    atom_rings_.resize(mol.atom_count());
    for (std::size_t r = 0; r < rings_.size(); ++r) {
      for (std::size_t a : rings_[r]) atom_rings_[a].push_back(r);
    }
    ring_done_.assign(rings_.size(), false);
    bridge_ = bridge_bonds(mol);
  }

  Coordinates run() {
    std::vector<bool> visited(mol_.atom_count(), false);
    double cursor = 0.0;
    bool first = true;
    for (std::size_t start = 0; start < mol_.atom_count(); ++start) {
      if (visited[start]) continue;
      std::vector<std::size_t> fragment = component(start, visited);
      order_.clear();
      place_fragment(start);
      resolve_collisions(fragment);
      // tile fragments left to right
      double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
      double min_y = min_x, max_y = -min_x;
      for (std::size_t a : fragment) {
        min_x = std::min(min_x, pos_[a].x);
        max_x = std::max(max_x, pos_[a].x);
        min_y = std::min(min_y, pos_[a].y);
        max_y = std::max(max_y, pos_[a].y);
      }
      const Vec2 shift{(first ? 0.0 : cursor) - min_x, -(min_y + max_y) / 2.0};
      first = false;
      for (std::size_t a : fragment) pos_[a] = pos_[a] + shift;
      cursor = max_x + shift.x + opt_.fragment_gap;
    }
    return Coordinates{pos_};
  }

 private:
  std::vector<std::size_t> component(std::size_t start, std::vector<bool>& visited) const {
    std::vector<std::size_t> out{start};
    visited[start] = true;
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (const auto& nb : mol_.neighbors(out[i])) {
        if (!visited[nb.atom]) {
          visited[nb.atom] = true;
          out.push_back(nb.atom);
        }
      }
    }
    return out;
  }

  double ring_radius(std::size_t n) const { return opt_.bond_length / (2.0 * std::sin(std::numbers::pi / double(n))); }

  void place(std::size_t atom, Vec2 p) {
    pos_[atom] = p;
    placed_[atom] = true;
    order_.push_back(atom);
  }

  void place_fragment(std::size_t start) {
    std::deque<std::size_t> queue;
    if (!atom_rings_[start].empty()) {
      const auto& ring = rings_[atom_rings_[start].front()];
      const std::size_t n = ring.size();
      const double radius = ring_radius(n);
      for (std::size_t k = 0; k < n; ++k) {
        const double theta = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * double(k) / double(n);
        place(ring[k], polar(radius, theta));
      }
      ring_done_[atom_rings_[start].front()] = true;
      for (std::size_t a : ring) queue.push_back(a);
    } else {
      place(start, {0.0, 0.0});
      queue.push_back(start);
    }
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      for (std::size_t r : atom_rings_[v]) {
        if (ring_done_[r]) continue;
        for (std::size_t a : place_ring(r)) queue.push_back(a);
      }
      for (std::size_t a : place_substituents(v)) queue.push_back(a);
    }
  }

  /// Directions from `v` to its placed neighbours.
  std::vector<double> placed_directions(std::size_t v) const {
    std::vector<double> dirs;
    for (const auto& nb : mol_.neighbors(v)) {
      if (placed_[nb.atom]) dirs.push_back((pos_[nb.atom] - pos_[v]).angle());
    }
    return dirs;
  }

  std::vector<std::size_t> place_ring(std::size_t r) {
    ring_done_[r] = true;
    const auto& ring = rings_[r];
    const std::size_t n = ring.size();
    std::vector<std::size_t> fresh;
    std::size_t n_placed = 0;
    for (std::size_t a : ring) n_placed += placed_[a] ? 1 : 0;
    if (n_placed == n) return fresh;

    if (n_placed == 1) {
      std::size_t k0 = 0;
      while (!placed_[ring[k0]]) ++k0;
      const std::size_t anchor = ring[k0];
      const auto dirs = placed_directions(anchor);
      Vec2 away{1.0, 0.0};
      if (!dirs.empty()) {
        Vec2 sum{};
        for (double d : dirs) sum = sum + polar(1.0, d);
        away = sum.norm() > 1e-9 ? sum * (-1.0 / sum.norm()) : polar(1.0, dirs.front() + std::numbers::pi / 2.0);
      }
      const double radius = ring_radius(n);
      const Vec2 center = pos_[anchor] + away * radius;
      const double theta0 = (pos_[anchor] - center).angle();
      for (std::size_t k = 1; k < n; ++k) {
        const std::size_t atom = ring[(k0 + k) % n];
        place(atom, center + polar(radius, theta0 + 2.0 * std::numbers::pi * double(k) / double(n)));
        fresh.push_back(atom);
      }
      return fresh;
    }

    // fill every run of unplaced atoms bounded by placed ones with an arc
    std::size_t k0 = 0;
    while (!placed_[ring[k0]]) ++k0;
    for (std::size_t step = 0; step < n;) {
      const std::size_t k = (k0 + step) % n;
      if (placed_[ring[k]]) {
        ++step;
        continue;
      }
      std::vector<std::size_t> run;
      while (!placed_[ring[(k0 + step) % n]]) {
        run.push_back(ring[(k0 + step) % n]);
        ++step;
      }
      const std::size_t before = ring[(k + n - 1) % n];
      const std::size_t after = ring[(k0 + step) % n];
      place_arc(before, after, run);
      fresh.insert(fresh.end(), run.begin(), run.end());
    }
    return fresh;
  }

  /// Places `run` on a circular arc from atom `a` to atom `b` with equal chords.
  void place_arc(std::size_t a, std::size_t b, const std::vector<std::size_t>& run) {
    const Vec2 pa = pos_[a], pb = pos_[b];
    const double chord = distance(pa, pb);
    const double segs = double(run.size() + 1);
    const double target = chord / opt_.bond_length;
    const Vec2 ex = chord > 1e-12 ? (pb - pa) * (1.0 / chord) : Vec2{1.0, 0.0};
    const Vec2 ey{-ex.y, ex.x};
    std::vector<Vec2> local;
    if (target >= segs - 1e-12) {
      // too far apart for the bond length: straight stretched line
      for (std::size_t i = 1; i <= run.size(); ++i) local.push_back({chord * double(i) / segs, 0.0});
    } else {
      // solve sin(segs*phi)/sin(phi) = target for phi in (0, pi/segs)
      double lo = 1e-12, hi = std::numbers::pi / segs;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f = std::sin(segs * mid) / std::sin(mid);
        (f > target ? lo : hi) = mid;
      }
      const double phi = 0.5 * (lo + hi);
      const double radius = opt_.bond_length / (2.0 * std::sin(phi));
      const double half_arc = segs * phi;
      const Vec2 center{chord / 2.0, -radius * std::cos(half_arc)};
      const double alpha = (Vec2{0.0, 0.0} - center).angle();
      for (std::size_t i = 1; i <= run.size(); ++i) {
        local.push_back(center + polar(radius, alpha - 2.0 * phi * double(i)));
      }
    }
    // bulge to the less crowded side
    auto to_world = [&](Vec2 p, double side) { return pa + ex * p.x + ey * (p.y * side); };
    auto crowding = [&](double side) {
      double score = 0.0;
      for (const Vec2& p : local) {
        const Vec2 w = to_world(p, side);
        for (std::size_t o : order_) {
          if (o == a || o == b) continue;
          const double d = distance(w, pos_[o]);
          if (d < 2.0 * opt_.bond_length) score += 2.0 * opt_.bond_length - d;
        }
      }
      return score;
    };
    const double up = crowding(1.0), down = crowding(-1.0);
    const double side = up <= down ? 1.0 : -1.0;
    for (std::size_t i = 0; i < run.size(); ++i) place(run[i], to_world(local[i], side));
  }

  /// Penalty for putting an atom at `p`: placed atoms (other than `from`) within two bond lengths.
  double crowding_at(Vec2 p, std::size_t from) const {
    double score = 0.0;
    for (std::size_t o : order_) {
      if (o == from) continue;
      const double d = distance(p, pos_[o]);
      if (d < 2.0 * opt_.bond_length) score += 2.0 * opt_.bond_length - d;
    }
    return score;
  }

  std::vector<std::size_t> place_substituents(std::size_t v) {
    std::vector<std::size_t> todo;
    for (const auto& nb : mol_.neighbors(v)) {
      if (!placed_[nb.atom]) todo.push_back(nb.atom);
    }
    if (todo.empty()) return todo;
    const auto dirs = placed_directions(v);
    const double two_pi = 2.0 * std::numbers::pi;
    std::vector<double> angles;
    const std::size_t k = todo.size();
    if (dirs.empty()) {
      for (std::size_t i = 0; i < k; ++i) angles.push_back(two_pi * double(i) / double(k));
    } else if (dirs.size() == 1 && k == 1) {
      // zig-zag: 120 degrees at v, alternating side along the chain
      const double incoming = dirs.front() + std::numbers::pi;
      int turn = turn_[v];
      const double keep = crowding_at(pos_[v] + polar(opt_.bond_length, incoming + turn * std::numbers::pi / 3.0), v);
      const double flip = crowding_at(pos_[v] + polar(opt_.bond_length, incoming - turn * std::numbers::pi / 3.0), v);
      if (flip + 1e-9 < keep) turn = -turn;
      angles.push_back(incoming + double(turn) * std::numbers::pi / 3.0);
      turn_[todo.front()] = -turn;
    } else if (dirs.size() == 1) {
      for (std::size_t i = 1; i <= k; ++i) angles.push_back(dirs.front() + two_pi * double(i) / double(k + 1));
    } else {
      std::vector<double> sorted = dirs;
      for (double& d : sorted) d = std::fmod(d + two_pi, two_pi);
      std::sort(sorted.begin(), sorted.end());
      double best_gap = -1.0, best_start = 0.0;
      for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double next = i + 1 < sorted.size() ? sorted[i + 1] : sorted.front() + two_pi;
        if (next - sorted[i] > best_gap + 1e-9) {
          best_gap = next - sorted[i];
          best_start = sorted[i];
        }
      }
      for (std::size_t i = 1; i <= k; ++i) angles.push_back(best_start + best_gap * double(i) / double(k + 1));
    }
    for (std::size_t i = 0; i < k; ++i) place(todo[i], pos_[v] + polar(opt_.bond_length, angles[i]));
    return todo;
  }

  std::vector<std::pair<std::size_t, std::size_t>> collisions(const std::vector<std::size_t>& atoms) const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      for (std::size_t j = i + 1; j < atoms.size(); ++j) {
        const std::size_t a = std::min(atoms[i], atoms[j]), b = std::max(atoms[i], atoms[j]);
        if (mol_.find_bond(a, b)) continue;
        if (distance(pos_[a], pos_[b]) < opt_.min_separation) out.emplace_back(a, b);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Bonds along a shortest path from a to b.
  std::vector<std::size_t> path_bonds(std::size_t a, std::size_t b) const {
    const std::size_t n = mol_.atom_count();
    std::vector<std::size_t> prev(n, n), via(n, 0);
    std::deque<std::size_t> queue{a};
    prev[a] = a;
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      if (v == b) break;
      for (const auto& nb : mol_.neighbors(v)) {
        if (prev[nb.atom] != n) continue;
        prev[nb.atom] = v;
        via[nb.atom] = nb.bond;
        queue.push_back(nb.atom);
      }
    }
    std::vector<std::size_t> out;
    if (prev[b] == n) return out;
    for (std::size_t v = b; v != a; v = prev[v]) out.push_back(via[v]);
    return out;
  }

  /// Atoms on the side of `bond` containing `side_atom`.
  std::vector<std::size_t> branch(std::size_t bond, std::size_t side_atom) const {
    std::vector<bool> seen(mol_.atom_count(), false);
    std::vector<std::size_t> out{side_atom};
    seen[side_atom] = true;
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (const auto& nb : mol_.neighbors(out[i])) {
        if (nb.bond == bond || seen[nb.atom]) continue;
        seen[nb.atom] = true;
        out.push_back(nb.atom);
      }
    }
    return out;
  }

  double overlap(const std::vector<std::size_t>& atoms) const {
    double total = 0.0;
    for (const auto& [a, b] : collisions(atoms)) total += opt_.min_separation - distance(pos_[a], pos_[b]);
    return total;
  }

  // Greedy: each round applies the single branch rotation that most reduces total overlap.
  void resolve_collisions(const std::vector<std::size_t>& fragment) {
    std::vector<double> applied(mol_.bond_count(), 0.0);
    for (int round = 0; round < 256; ++round) {
      const auto hits = collisions(fragment);
      if (hits.empty()) return;
      std::vector<std::size_t> candidates;
      for (const auto& [a, b] : hits)
        for (std::size_t bond : path_bonds(a, b))
          if (bridge_[bond]) candidates.push_back(bond);
      std::sort(candidates.begin(), candidates.end());
      candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

      const double current = overlap(fragment);
      const std::vector<Vec2> saved = pos_;
      double best = current - 1e-9;
      std::size_t best_bond = mol_.bond_count();
      double best_deg = 0.0;
      for (std::size_t bond : candidates) {
        const auto& bd = mol_.bonds[bond];
        auto side = branch(bond, bd.b);
        std::size_t pivot = bd.a;
        if (side.size() * 2 > fragment.size()) {
          side = branch(bond, bd.a);
          pivot = bd.b;
        }
        for (double deg : opt_.perturbations) {
          if (std::abs(applied[bond] + deg) > opt_.max_perturbation + 1e-9) continue;
          const double theta = deg * std::numbers::pi / 180.0;
          for (std::size_t s : side) pos_[s] = rotate_about(saved[s], saved[pivot], theta);
          const double score = overlap(fragment);
          if (score < best) {
            best = score;
            best_bond = bond;
            best_deg = deg;
          }
          for (std::size_t s : side) pos_[s] = saved[s];
        }
      }
      if (best_bond == mol_.bond_count()) {
        const auto [a, b] = hits.front();
        throw LayoutOverlap(a, b, distance(pos_[a], pos_[b]));
      }
      const auto& bd = mol_.bonds[best_bond];
      auto side = branch(best_bond, bd.b);
      std::size_t pivot = bd.a;
      if (side.size() * 2 > fragment.size()) {
        side = branch(best_bond, bd.a);
        pivot = bd.b;
      }
      const double theta = best_deg * std::numbers::pi / 180.0;
      for (std::size_t s : side) pos_[s] = rotate_about(saved[s], saved[pivot], theta);
      applied[best_bond] += best_deg;
    }
    const auto hits = collisions(fragment);
    if (!hits.empty()) {
      const auto [a, b] = hits.front();
      throw LayoutOverlap(a, b, distance(pos_[a], pos_[b]));
    }
  }

  const Molecule& mol_;
  const LayoutOptions& opt_;
  std::vector<std::vector<std::size_t>> rings_;
  std::vector<std::vector<std::size_t>> atom_rings_;
  std::vector<bool> ring_done_;
  std::vector<bool> bridge_;
  std::vector<Vec2> pos_;
  std::vector<bool> placed_;
  std::vector<int> turn_;
  std::vector<std::size_t> order_;
};

}  // namespace detail

/// Deterministic 2D depiction coordinates (Angstrom).
///
/// Rings become regular polygons, fused rings share an edge, chains zig-zag
/// at 120 degrees and substituents split the widest free angle around their
/// atom. Non-bonded atoms closer than `min_separation` are pushed apart by
/// rotating acyclic branches in 10 degree steps (at most 30 degrees per bond);
/// LayoutOverlap is thrown if that fails.
inline Coordinates generate_coords(const Molecule& mol, const LayoutOptions& options = {}) {
  return detail::LayoutBuilder(mol, options).run();
}

inline Coordinates generate_coords(const Molecule& mol, double bond_length) {
  LayoutOptions opt;
  opt.bond_length = bond_length;
  return generate_coords(mol, opt);
}

/// Moves the bounding-box centre to the origin, then rotates by `degrees` about it.
inline Coordinates center_and_rotate(const Coordinates& coords, double degrees) {
  if (coords.xy.empty()) return coords;
  double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x, min_y = min_x, max_y = -min_x;
  for (const auto& p : coords.xy) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const Vec2 center{(min_x + max_x) / 2.0, (min_y + max_y) / 2.0};
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  Coordinates out;
  out.xy.reserve(coords.size());
  for (const auto& p : coords.xy) {
    const Vec2 d = p - center;
    out.xy.push_back({c * d.x - s * d.y, s * d.x + c * d.y});
  }
  return out;
}

}  // namespace chemimg
