#pragma once
// Collision-label combinatorics for the iterated Duhamel expansion: the
// special upper echelon sequence sets E_{j,k+1} of the Klainerman-Machedon
// board game, cardinality growth diagnostics, and a small-instance check
// that regrouping the labeled collision sum by echelon signature reproduces
// the raw simplex integral.
//
// Conventions. Expanding level k to depth j, the stage-i contraction (i =
// 1..j, outermost first) acts on level k+i and may target any of its first
// k+i-1 slots, so the raw sum carries prod_{i=1..j}(k+i-1) label sequences.
// Sorting a sequence nonincreasingly yields its echelon signature, which
// lands in E_{j,k+1}; label sequences that are permutations of one another
// by exchanging disjoint collisions contribute the same kernel after the
// matching permutation of time variables, so each signature class can be
// integrated once over the union of the permuted simplices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "contraction.hpp"
#include "density.hpp"
#include "grid.hpp"
#include "hierarchy.hpp"

namespace gph {

// ---------------------------------------------------------------------------
// Echelon sequences.
// ---------------------------------------------------------------------------

struct EchelonSequence {
  int j = 0;
  int k = 0;
  std::vector<int> entries;  // nonincreasing, entries[i] <= k+i+1 (0-based i)

  void validate() const {
    if (j < 1 || k < 1) throw argument_error("echelon sequence needs j, k >= 1");
    if (int(entries.size()) != j)
      throw argument_error("echelon sequence length differs from depth");
    for (int i = 0; i < j; ++i) {
      if (entries[i] < 1 || entries[i] > k + i + 1)
        throw argument_error("echelon entry out of range");
      if (i > 0 && entries[i] > entries[i - 1])
        throw argument_error("echelon entries must be nonincreasing");
    }
  }
};

inline void check_echelon_args(int j, int k) {
  if (j < 1 || k < 1) throw argument_error("echelon enumeration needs j, k >= 1");
  if (j + k > 24)
    throw capacity_error("echelon enumeration capped at j+k <= 24, got " +
                         std::to_string(j + k));
}

// All sequences of E_{j,k+1}, lexicographically sorted. Nonincreasing
// entries make the first bound k+1 the binding one for every position, but
// the stated per-position cap is enforced anyway.
inline std::vector<EchelonSequence> enumerate_echelon(int j, int k) {
  check_echelon_args(j, k);
  std::vector<EchelonSequence> out;
  std::vector<int> cur(j, 0);
  auto rec = [&](auto&& self, int pos) -> void {
    if (pos == j) {
      out.push_back(EchelonSequence{j, k, cur});
      return;
    }
    const int cap = std::min(pos == 0 ? k + 1 : cur[pos - 1], k + pos + 1);
    for (int v = 1; v <= cap; ++v) {
      cur[pos] = v;
      self(self, pos + 1);
    }
  };
  rec(rec, 0);
  return out;
}

// |E_{j,k+1}| by recurrence: ways[v] holds the number of nonincreasing
// sequences of the current length whose leading entry equals v; prepending a
// larger-or-equal entry extends the length by one.
inline std::uint64_t count_echelon(int j, int k) {
  if (j < 1 || k < 1) throw argument_error("echelon count needs j, k >= 1");
  if (j + k > 48)
    throw capacity_error("echelon count capped at j+k <= 48, got " +
                         std::to_string(j + k));
  std::vector<std::uint64_t> ways(std::size_t(k) + 2, 1);  // length 1
  for (int len = 2; len <= j; ++len) {
    std::vector<std::uint64_t> next(ways.size(), 0);
    for (int v = 1; v <= k + 1; ++v) {
      std::uint64_t acc = 0;
      for (int u = 1; u <= v; ++u) acc += ways[u];
      next[v] = acc;
    }
    ways.swap(next);
  }
  std::uint64_t total = 0;
  for (int v = 1; v <= k + 1; ++v) total += ways[v];
  return total;
}

// Raw collision-label sequences for expanding level k to depth j; stage i
// (1-based, outermost first) targets a slot in {1..k+i-1}.
inline std::vector<std::vector<int>> collision_label_sequences(int j, int k) {
  if (j < 1 || k < 1)
    throw argument_error("collision labels need j, k >= 1");
  std::uint64_t count = 1;
  for (int i = 1; i <= j; ++i) {
    count *= std::uint64_t(k + i - 1);
    if (count > 10'000'000)
      throw capacity_error("collision label enumeration too large");
  }
  std::vector<std::vector<int>> out;
  out.reserve(count);
  std::vector<int> cur(j, 0);
  auto rec = [&](auto&& self, int pos) -> void {
    if (pos == j) {
      out.push_back(cur);
      return;
    }
    for (int v = 1; v <= k + pos; ++v) {
      cur[pos] = v;
      self(self, pos + 1);
    }
  };
  rec(rec, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Cardinality growth.
// ---------------------------------------------------------------------------

struct EchelonGrowthRow {
  int j = 0;
  int k = 0;
  std::uint64_t count = 0;
  double c_min = 0.0;  // count^{1/(j+k)}
};

struct EchelonGrowthFit {
  std::vector<EchelonGrowthRow> rows;
  double c_min = 0.0;      // smallest C with count <= C^{j+k} over all rows
  double slope = 0.0;      // linear fit of log(max count per diagonal) vs j+k
  double intercept = 0.0;
  double curvature = 0.0;  // quadratic coefficient of the same fit
  bool at_most_exponential = false;
};

// Enumerates every (j,k) with j,k >= 1 and j+k on [sum_lo, sum_hi] and fits
// the growth of |E_{j,k+1}| in j+k. Upward curvature of log-count along the
// diagonal maximum would indicate super-exponential growth; the flag asserts
// it stays negligible.
inline EchelonGrowthFit cardinality_growth_fit(int sum_lo, int sum_hi) {
  if (sum_lo < 2) throw argument_error("growth fit needs j+k >= 2");
  if (sum_hi - sum_lo < 4)
    throw argument_error("growth fit needs at least 5 values of j+k");
  if (sum_hi > 48)
    throw capacity_error("growth fit capped at j+k <= 48");

  EchelonGrowthFit fit;
  std::vector<double> xs, ys;
  for (int s = sum_lo; s <= sum_hi; ++s) {
    std::uint64_t diag_max = 0;
    for (int j = 1; j <= s - 1; ++j) {
      const int k = s - j;
      EchelonGrowthRow row;
      row.j = j;
      row.k = k;
      row.count = count_echelon(j, k);
      row.c_min = std::pow(double(row.count), 1.0 / double(s));
      fit.rows.push_back(row);
      fit.c_min = std::max(fit.c_min, row.c_min);
      diag_max = std::max(diag_max, row.count);
    }
    xs.push_back(double(s));
    ys.push_back(std::log(double(diag_max)));
  }

  const int n = int(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) throw numeric_error("degenerate growth fit");
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;

  // Quadratic refit for the curvature term: solve the 3x3 normal equations.
  double m[3][4] = {};
  for (int i = 0; i < n; ++i) {
    const double x = xs[i], y = ys[i];
    const double p[3] = {1.0, x, x * x};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r][c] += p[r] * p[c];
      m[r][3] += p[r] * y;
    }
  }
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    for (int c = 0; c < 4; ++c) std::swap(m[col][c], m[piv][c]);
    if (std::abs(m[col][col]) < 1e-300)
      throw numeric_error("degenerate growth fit");
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  fit.curvature = m[2][3] / m[2][2];
  fit.at_most_exponential =
      std::isfinite(fit.slope) && fit.curvature <= 0.02;
  return fit;
}

inline std::string echelon_table_csv(const EchelonGrowthFit& fit) {
  std::string out = "j,k,count,c_min\n";
  for (const EchelonGrowthRow& row : fit.rows) {
    out += std::to_string(row.j) + "," + std::to_string(row.k) + "," +
           std::to_string(row.count) + "," + format_double(row.c_min) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Collapse check: raw labeled sum over the ordered simplex against the
// echelon-signature regrouping with merged time domains.
// ---------------------------------------------------------------------------

struct CollapseClassReport {
  std::vector<int> signature;
  int members = 0;
  bool merged_square = false;  // transposed pair integrated over [0,t]^2
  double norm = 0.0;
};

struct CollapseReport {
  int k = 0;
  int j = 0;
  int quad = 0;
  double t = 0.0;
  int raw_terms = 0;
  std::uint64_t echelon_size = 0;  // |E_{j,k+1}|, empty classes included
  std::vector<CollapseClassReport> classes;
  double raw_norm = 0.0;
  double grouped_norm = 0.0;
  double abs_discrepancy = 0.0;
  double rel_discrepancy = 0.0;
};

namespace detail {

// Labeled collision chain at fixed times, outermost label first. Times need
// not be ordered; merged rectangular domains sample the representative with
// a negative intermediate gap where the transposed member used to live.
inline DensityMatrix collision_chain(const HierarchyState& st,
                                     const DensityMatrix& top,
                                     const std::vector<int>& labels, double t,
                                     const std::vector<double>& times) {
  const int j = int(labels.size());
  DensityMatrix x = free_propagate(top, times[j - 1]);
  for (int i = j - 1; i >= 0; --i) {
    x = apply_B_single(x, labels[i], st.model);
    const double up = i == 0 ? t : times[i - 1];
    x = free_propagate(x, up - times[i]);
  }
  return x;
}

}  // namespace detail

inline CollapseReport verify_collapse(const HierarchyState& st, int k, int j,
                                      double t, int quad) {
  st.validate();
  if (st.model.p != 2)
    throw argument_error("verify_collapse covers the cubic hierarchy only");
  if (k < 1) throw argument_error("verify_collapse: need k >= 1");
  if (j < 1 || j > 2)
    throw argument_error("verify_collapse: depth must be 1 or 2");
  if (quad < 6) throw argument_error("verify_collapse: need quadrature >= 6");
  if (t < 0) throw argument_error("verify_collapse: negative time");
  if (quad % 2) ++quad;  // composite Simpson wants an even interval count

  const GridSpec& g = st.grid();
  require_capacity(dense_bytes(g.slot_points(), 2 * k) * 4,
                   "collapse accumulators");

  CollapseReport rep;
  rep.k = k;
  rep.j = j;
  rep.quad = quad;
  rep.t = t;
  rep.echelon_size = count_echelon(j, k);

  const auto label_seqs = collision_label_sequences(j, k);
  rep.raw_terms = int(label_seqs.size());

  cplx pref(1, 0);
  for (int i = 0; i < j; ++i) pref *= -I * st.model.mu;

  const DensityMatrix top = closure_marginal(st, k + j);

  // Raw side: each label sequence over the ordered simplex, iterated
  // composite Simpson in each time variable. Integrals are cached per term
  // so single-member classes reuse them verbatim.
  std::vector<DensityMatrix> term_integral;
  term_integral.reserve(label_seqs.size());
  DensityMatrix raw_sum(dense_zero(g, k));
  for (const auto& labels : label_seqs) {
    DensityMatrix acc(dense_zero(g, k));
    if (t > 0) {
      const auto wo = simpson_weights(quad, t);
      if (j == 1) {
        for (int a = 0; a <= quad; ++a) {
          DensityMatrix val = detail::collision_chain(
              st, top, labels, t, {t * a / quad});
          add_scaled(acc, DensityMatrix(materialize(val)), pref * wo[a]);
        }
      } else {
        for (int a = 0; a <= quad; ++a) {
          const double s1 = t * a / quad;
          if (s1 <= 0) continue;
          const auto wi = simpson_weights(quad, s1);
          for (int b = 0; b <= quad; ++b) {
            const double s2 = s1 * b / quad;
            DensityMatrix val =
                detail::collision_chain(st, top, labels, t, {s1, s2});
            add_scaled(acc, DensityMatrix(materialize(val)),
                       pref * wo[a] * wi[b]);
          }
        }
      }
    }
    add_scaled(raw_sum, acc, cplx(1, 0));
    term_integral.push_back(std::move(acc));
  }

  // Group by echelon signature (labels sorted nonincreasingly).
  std::map<std::vector<int>, std::vector<std::size_t>> classes;
  for (std::size_t idx = 0; idx < label_seqs.size(); ++idx) {
    std::vector<int> sig = label_seqs[idx];
    std::sort(sig.begin(), sig.end(), std::greater<int>());
    EchelonSequence{j, k, sig}.validate();
    classes[sig].push_back(idx);
  }

  DensityMatrix grouped_sum(dense_zero(g, k));
  for (const auto& [sig, members] : classes) {
    CollapseClassReport row;
    row.signature = sig;
    row.members = int(members.size());
    DensityMatrix class_val(dense_zero(g, k));
    if (members.size() == 1) {
      add_scaled(class_val, term_integral[members.front()], cplx(1, 0));
    } else if (members.size() == 2 && j == 2) {
      // Transposed pair: the nonincreasing representative integrated over
      // the merged domain [0,t]^2 by a tensor Simpson rule.
      row.merged_square = true;
      if (t > 0) {
        const auto w = simpson_weights(quad, t);
        for (int a = 0; a <= quad; ++a) {
          const double s1 = t * a / quad;
          for (int b = 0; b <= quad; ++b) {
            const double s2 = t * b / quad;
            DensityMatrix val =
                detail::collision_chain(st, top, sig, t, {s1, s2});
            add_scaled(class_val, DensityMatrix(materialize(val)),
                       pref * w[a] * w[b]);
          }
        }
      }
    } else {
      throw state_error("verify_collapse: unexpected class population");
    }
    row.norm = l2_norm(class_val);
    add_scaled(grouped_sum, class_val, cplx(1, 0));
    rep.classes.push_back(std::move(row));
  }

  rep.raw_norm = l2_norm(raw_sum);
  rep.grouped_norm = l2_norm(grouped_sum);
  rep.abs_discrepancy = l2_distance(raw_sum, grouped_sum);
  rep.rel_discrepancy =
      rep.raw_norm > 0 ? rep.abs_discrepancy / rep.raw_norm : rep.abs_discrepancy;
  return rep;
}

}  // namespace gph
