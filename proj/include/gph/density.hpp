#pragma once

// k-particle reduced density matrices on the periodic grid.
//
// Two storage formats share one interface:
//
//  * DenseKernel: the full rank-2k tensor gamma(x_1..x_k; x'_1..x'_k),
//    row-major with the k unprimed slots first. Memory-gated; intended for
//    small grids and oracle checks.
//
//  * SeparableKernel: a sum of product dyads
//        gamma = sum_m c_m  prod_j ket_mj(x_j) * conj(bra_mj(x'_j)).
//    Every operator in this codebase maps product terms to product terms,
//    so large-k states stay in this format end to end. Slot factors are
//    full d-dimensional fields, which keeps slot-diagonal multipliers
//    (free flow, Japanese brackets) exact per factor.
//
// Inner products and norms use the continuum-consistent h^d weight per slot.

#include <variant>
#include <vector>

#include "common.hpp"
#include "fft.hpp"
#include "grid.hpp"
#include "multiplier.hpp"
#include "wavefunction.hpp"

namespace gph {

enum class Repr { dense, separable };

struct DenseKernel {
  GridSpec grid;
  int k = 0;
  std::vector<cplx> a;

  std::uint64_t slot_points() const { return grid.slot_points(); }

  std::uint64_t size() const {
    std::uint64_t N = slot_points(), s = 1;
    for (int i = 0; i < 2 * k; ++i) s *= N;
    return s;
  }
};

struct SepTerm {
  cplx c{1.0, 0.0};
  // k factors per side, each of length n^d. The kernel uses conj(bra).
  std::vector<std::vector<cplx>> ket;
  std::vector<std::vector<cplx>> bra;
};

struct SeparableKernel {
  GridSpec grid;
  int k = 0;
  std::vector<SepTerm> terms;
};

class DensityMatrix {
 public:
  DensityMatrix() : body_(SeparableKernel{}) {}
  explicit DensityMatrix(DenseKernel d) : body_(std::move(d)) {}
  explicit DensityMatrix(SeparableKernel s) : body_(std::move(s)) {}

  bool is_dense() const { return std::holds_alternative<DenseKernel>(body_); }
  Repr repr() const { return is_dense() ? Repr::dense : Repr::separable; }

  const DenseKernel& dense() const {
    if (!is_dense()) throw state_error("density matrix is not dense");
    return std::get<DenseKernel>(body_);
  }
  DenseKernel& dense() {
    if (!is_dense()) throw state_error("density matrix is not dense");
    return std::get<DenseKernel>(body_);
  }
  const SeparableKernel& sep() const {
    if (is_dense()) throw state_error("density matrix is not separable");
    return std::get<SeparableKernel>(body_);
  }
  SeparableKernel& sep() {
    if (is_dense()) throw state_error("density matrix is not separable");
    return std::get<SeparableKernel>(body_);
  }

  int k() const { return is_dense() ? dense().k : sep().k; }
  const GridSpec& grid() const { return is_dense() ? dense().grid : sep().grid; }
  int term_count() const { return is_dense() ? -1 : int(sep().terms.size()); }

 private:
  std::variant<DenseKernel, SeparableKernel> body_;
};

// ---------------------------------------------------------------------------
// Construction.
// ---------------------------------------------------------------------------

inline void require_dense_fits(const GridSpec& g, int k, const std::string& what) {
  require_capacity(dense_bytes(g.slot_points(), 2 * k), what);
}

inline DenseKernel dense_zero(const GridSpec& g, int k) {
  g.validate();
  if (k < 1) throw argument_error("k must be >= 1");
  require_dense_fits(g, k, "dense kernel (k=" + std::to_string(k) + ")");
  DenseKernel out;
  out.grid = g;
  out.k = k;
  out.a.assign(out.size(), cplx(0, 0));
  return out;
}

inline SeparableKernel sep_zero(const GridSpec& g, int k) {
  g.validate();
  if (k < 1) throw argument_error("k must be >= 1");
  return SeparableKernel{g, k, {}};
}

// |phi><phi|^{(x) k}.
inline DensityMatrix from_factorized(const WaveFunction& phi, int k, Repr repr) {
  phi.validate();
  if (k < 1) throw argument_error("k must be >= 1");
  if (repr == Repr::separable) {
    SeparableKernel s = sep_zero(phi.grid, k);
    SepTerm t;
    t.c = cplx(1, 0);
    t.ket.assign(k, phi.v);
    t.bra.assign(k, phi.v);
    s.terms.push_back(std::move(t));
    return DensityMatrix(std::move(s));
  }
  DenseKernel dkr = dense_zero(phi.grid, k);
  const std::uint64_t N = dkr.slot_points();
  std::vector<std::uint64_t> idx(2 * k, 0);
  for (std::uint64_t flat = 0; flat < dkr.a.size(); ++flat) {
    std::uint64_t rem = flat;
    for (int s = 2 * k - 1; s >= 0; --s) {
      idx[s] = rem % N;
      rem /= N;
    }
    cplx v(1, 0);
    for (int s = 0; s < k; ++s) v *= phi.v[idx[s]];
    for (int s = k; s < 2 * k; ++s) v *= std::conj(phi.v[idx[s]]);
    dkr.a[flat] = v;
  }
  return DensityMatrix(std::move(dkr));
}

// ---------------------------------------------------------------------------
// Point evaluation (oracle helper). Slots: unprimed 0..k-1, primed k..2k-1.
// ---------------------------------------------------------------------------

inline cplx value_at(const DensityMatrix& g, const std::vector<std::uint64_t>& slots) {
  const int k = g.k();
  if (int(slots.size()) != 2 * k) throw argument_error("value_at: need 2k slot indices");
  if (g.is_dense()) {
    const DenseKernel& dk = g.dense();
    const std::uint64_t N = dk.slot_points();
    std::uint64_t flat = 0;
    for (int s = 0; s < 2 * k; ++s) {
      if (slots[s] >= N) throw argument_error("value_at: slot index out of range");
      flat = flat * N + slots[s];
    }
    return dk.a[flat];
  }
  const SeparableKernel& sp = g.sep();
  cplx acc(0, 0);
  for (const SepTerm& t : sp.terms) {
    cplx v = t.c;
    for (int j = 0; j < k; ++j) v *= t.ket[j][slots[j]];
    for (int j = 0; j < k; ++j) v *= std::conj(t.bra[j][slots[k + j]]);
    acc += v;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Linear algebra on kernels.
// ---------------------------------------------------------------------------

inline void scale(DensityMatrix& g, cplx s) {
  if (g.is_dense()) {
    for (cplx& z : g.dense().a) z *= s;
  } else {
    for (SepTerm& t : g.sep().terms) t.c *= s;
  }
}

// a += s * b. Both operands must share grid, k, and representation.
inline void add_scaled(DensityMatrix& a, const DensityMatrix& b, cplx s) {
  if (a.k() != b.k() || !(a.grid() == b.grid()))
    throw shape_error("add_scaled: operands have different shapes");
  if (a.repr() != b.repr())
    throw shape_error("add_scaled: operands have different representations");
  if (a.is_dense()) {
    auto& av = a.dense().a;
    const auto& bv = b.dense().a;
    for (std::size_t i = 0; i < av.size(); ++i) av[i] += s * bv[i];
  } else {
    for (const SepTerm& t : b.sep().terms) {
      a.sep().terms.push_back(t);
      a.sep().terms.back().c *= s;
    }
  }
}

// Materialize a separable kernel as dense (budget-gated).
inline DenseKernel materialize(const SeparableKernel& s) {
  DenseKernel out = dense_zero(s.grid, s.k);
  const std::uint64_t N = out.slot_points();
  const int k = s.k;
  std::vector<std::uint64_t> idx(2 * k, 0);
  for (std::uint64_t flat = 0; flat < out.a.size(); ++flat) {
    std::uint64_t rem = flat;
    for (int sl = 2 * k - 1; sl >= 0; --sl) {
      idx[sl] = rem % N;
      rem /= N;
    }
    cplx acc(0, 0);
    for (const SepTerm& t : s.terms) {
      cplx v = t.c;
      for (int j = 0; j < k; ++j) v *= t.ket[j][idx[j]];
      for (int j = 0; j < k; ++j) v *= std::conj(t.bra[j][idx[k + j]]);
      acc += v;
    }
    out.a[flat] = acc;
  }
  return out;
}

inline DenseKernel materialize(const DensityMatrix& g) {
  if (g.is_dense()) return g.dense();
  return materialize(g.sep());
}

// ---------------------------------------------------------------------------
// Trace and partial trace. Tr gamma = h^{dk} sum_x gamma(x;x).
// ---------------------------------------------------------------------------

inline cplx trace(const DensityMatrix& g) {
  const int k = g.k();
  const double hd = g.grid().cell_volume();
  if (g.is_dense()) {
    const DenseKernel& dk = g.dense();
    const std::uint64_t N = dk.slot_points();
    // Diagonal flat index: unprimed block equals primed block.
    std::uint64_t Nk = 1;
    for (int i = 0; i < k; ++i) Nk *= N;
    cplx s(0, 0);
    std::vector<std::uint64_t> idx(k, 0);
    for (std::uint64_t diag = 0; diag < Nk; ++diag) {
      std::uint64_t flat = diag * Nk + diag;
      s += dk.a[flat];
    }
    double w = 1.0;
    for (int i = 0; i < k; ++i) w *= hd;
    return s * w;
  }
  const SeparableKernel& sp = g.sep();
  cplx total(0, 0);
  for (const SepTerm& t : sp.terms) {
    cplx v = t.c;
    for (int j = 0; j < k; ++j) {
      cplx dot(0, 0);
      for (std::size_t x = 0; x < t.ket[j].size(); ++x)
        dot += t.ket[j][x] * std::conj(t.bra[j][x]);
      v *= dot * hd;
    }
    total += v;
  }
  return total;
}

// Trace out the last q particle slots: gamma^{(k-q)}(y;y') =
// h^{dq} sum_z gamma(y,z; y',z).
inline DensityMatrix partial_trace(const DensityMatrix& g, int q) {
  const int k = g.k();
  if (q < 0 || q >= k) throw argument_error("partial_trace: need 0 <= q < k");
  if (q == 0) return g;
  const int kk = k - q;
  const double hd = g.grid().cell_volume();
  if (!g.is_dense()) {
    const SeparableKernel& sp = g.sep();
    SeparableKernel out = sep_zero(sp.grid, kk);
    out.terms.reserve(sp.terms.size());
    for (const SepTerm& t : sp.terms) {
      SepTerm nt;
      nt.c = t.c;
      for (int j = kk; j < k; ++j) {
        cplx dot(0, 0);
        for (std::size_t x = 0; x < t.ket[j].size(); ++x)
          dot += t.ket[j][x] * std::conj(t.bra[j][x]);
        nt.c *= dot * hd;
      }
      nt.ket.assign(t.ket.begin(), t.ket.begin() + kk);
      nt.bra.assign(t.bra.begin(), t.bra.begin() + kk);
      out.terms.push_back(std::move(nt));
    }
    return DensityMatrix(std::move(out));
  }
  const DenseKernel& dk = g.dense();
  const std::uint64_t N = dk.slot_points();
  DenseKernel out = dense_zero(dk.grid, kk);
  std::uint64_t Nq = 1;
  for (int i = 0; i < q; ++i) Nq *= N;
  std::uint64_t Nkk = 1;
  for (int i = 0; i < kk; ++i) Nkk *= N;
  double w = 1.0;
  for (int i = 0; i < q; ++i) w *= hd;
  // Input flat = ((y * Nq + z) * Nkk + y') * Nq + z.
  for (std::uint64_t y = 0; y < Nkk; ++y) {
    for (std::uint64_t yp = 0; yp < Nkk; ++yp) {
      cplx s(0, 0);
      for (std::uint64_t z = 0; z < Nq; ++z) {
        std::uint64_t flat = ((y * Nq + z) * Nkk + yp) * Nq + z;
        s += dk.a[flat];
      }
      out.a[y * Nkk + yp] = s * w;
    }
  }
  return DensityMatrix(std::move(out));
}

// ---------------------------------------------------------------------------
// L2 geometry: h-weighted inner products via slot Gram products for the
// separable format, direct sums for dense.
// ---------------------------------------------------------------------------

namespace detail {

inline cplx slot_dot(const std::vector<cplx>& a, const std::vector<cplx>& b,
                     double hd) {
  cplx s(0, 0);
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s * hd;
}

// <term s, term t> in L2(dx dx'), kernels with conj(bra) convention.
inline cplx term_inner(const SepTerm& s, const SepTerm& t, int k, double hd) {
  cplx v = std::conj(s.c) * t.c;
  for (int j = 0; j < k; ++j) v *= slot_dot(s.ket[j], t.ket[j], hd);
  for (int j = 0; j < k; ++j) v *= std::conj(slot_dot(s.bra[j], t.bra[j], hd));
  return v;
}

}  // namespace detail

inline cplx inner_l2(const DensityMatrix& a, const DensityMatrix& b) {
  if (a.k() != b.k() || !(a.grid() == b.grid()))
    throw shape_error("inner_l2: operands have different shapes");
  const int k = a.k();
  const double hd = a.grid().cell_volume();
  if (a.is_dense() && b.is_dense()) {
    const auto& av = a.dense().a;
    const auto& bv = b.dense().a;
    cplx s(0, 0);
    for (std::size_t i = 0; i < av.size(); ++i) s += std::conj(av[i]) * bv[i];
    double w = 1.0;
    for (int i = 0; i < 2 * k; ++i) w *= hd;
    return s * w;
  }
  if (!a.is_dense() && !b.is_dense()) {
    cplx s(0, 0);
    for (const SepTerm& ta : a.sep().terms)
      for (const SepTerm& tb : b.sep().terms)
        s += detail::term_inner(ta, tb, k, hd);
    return s;
  }
  // Mixed representations: evaluate through the dense side.
  const DenseKernel dense_a = materialize(a);
  const DenseKernel dense_b = materialize(b);
  return inner_l2(DensityMatrix(dense_a), DensityMatrix(dense_b));
}

inline double l2_norm(const DensityMatrix& g) {
  double v = std::real(inner_l2(g, g));
  return std::sqrt(std::max(0.0, v));
}

// L2 distance ||a-b||, and the relative form ||a-b|| / max(||a||, ||b||).
//
// Expanding the square as ||a||^2 + ||b||^2 - 2 Re<a,b> cancels
// catastrophically when a and b agree to high precision, flooring the
// measurable distance near sqrt(machine eps). Whenever a dense form fits a
// small scratch cap the difference is subtracted entrywise instead, which is
// exact; the Gram expansion only remains for large separable pairs, whose
// callers compare against tolerances far above that floor.
namespace detail {
struct dist_parts {
  double dist, na, nb;
};
inline dist_parts l2_distance_parts(const DensityMatrix& a,
                                    const DensityMatrix& b) {
  if (a.k() != b.k() || !(a.grid() == b.grid()))
    throw shape_error("l2_distance: operands have different shapes");
  const int k = a.k();
  const std::uint64_t scratch_cap = 64ull * 1024 * 1024;
  const bool small = dense_bytes(a.grid().slot_points(), 2 * k) <= scratch_cap;
  if (small || (a.is_dense() && b.is_dense())) {
    DenseKernel da = materialize(a);
    DenseKernel db = materialize(b);
    double diff2 = 0, na2 = 0, nb2 = 0;
    for (std::size_t i = 0; i < da.a.size(); ++i) {
      diff2 += std::norm(da.a[i] - db.a[i]);
      na2 += std::norm(da.a[i]);
      nb2 += std::norm(db.a[i]);
    }
    double w = 1.0;
    for (int j = 0; j < 2 * k; ++j) w *= a.grid().cell_volume();
    return {std::sqrt(w * diff2), std::sqrt(w * na2), std::sqrt(w * nb2)};
  }
  double na2 = std::max(0.0, std::real(inner_l2(a, a)));
  double nb2 = std::max(0.0, std::real(inner_l2(b, b)));
  double cross = std::real(inner_l2(a, b));
  double dist2 = std::max(0.0, na2 + nb2 - 2.0 * cross);
  return {std::sqrt(dist2), std::sqrt(na2), std::sqrt(nb2)};
}
}  // namespace detail

inline double l2_distance(const DensityMatrix& a, const DensityMatrix& b) {
  return detail::l2_distance_parts(a, b).dist;
}

inline double rel_l2_distance(const DensityMatrix& a, const DensityMatrix& b) {
  detail::dist_parts p = detail::l2_distance_parts(a, b);
  return p.dist / std::max({p.na, p.nb, 1e-300});
}

// ---------------------------------------------------------------------------
// Hermitian adjoint and hermiticity defect.
// ---------------------------------------------------------------------------

inline DensityMatrix adjoint(const DensityMatrix& g) {
  const int k = g.k();
  if (!g.is_dense()) {
    SeparableKernel out = g.sep();
    for (SepTerm& t : out.terms) {
      std::swap(t.ket, t.bra);
      t.c = std::conj(t.c);
    }
    return DensityMatrix(std::move(out));
  }
  const DenseKernel& dk = g.dense();
  DenseKernel out = dense_zero(dk.grid, k);
  const std::uint64_t N = dk.slot_points();
  std::uint64_t Nk = 1;
  for (int i = 0; i < k; ++i) Nk *= N;
  for (std::uint64_t u = 0; u < Nk; ++u)
    for (std::uint64_t v = 0; v < Nk; ++v)
      out.a[u * Nk + v] = std::conj(dk.a[v * Nk + u]);
  return DensityMatrix(std::move(out));
}

namespace detail {

// <term s, term t> with every factor product carried in double-double, for
// measurements that sit far below the plain-double cancellation floor.
inline dd::complex term_inner_dd(const SepTerm& s, const SepTerm& t, int k,
                                 double hd) {
  const dd::real hdd = dd::from(hd);
  dd::complex v = dd::mul(dd::conj(dd::from(s.c)), dd::from(t.c));
  for (int j = 0; j < k; ++j) {
    dd::complex g = dd::dot(s.ket[j], t.ket[j]);
    g.re = dd::mul(g.re, hdd);
    g.im = dd::mul(g.im, hdd);
    v = dd::mul(v, g);
  }
  for (int j = 0; j < k; ++j) {
    dd::complex g = dd::conj(dd::dot(s.bra[j], t.bra[j]));
    g.re = dd::mul(g.re, hdd);
    g.im = dd::mul(g.im, hdd);
    v = dd::mul(v, g);
  }
  return v;
}

}  // namespace detail

// || gamma - gamma^dagger || / || gamma || (0 for the zero kernel).
//
// The evolution keeps states hermitian to roughly the compression tolerance,
// which a plain-double Gram sum cannot resolve: it bottoms out near
// sqrt(eps) * ||gamma||. For separable kernels the difference against the
// adjoint is formed term-by-term and its norm accumulated in double-double,
// which measures the true defect down to ~1e-15.
inline double hermiticity_defect(const DensityMatrix& g) {
  const double norm = l2_norm(g);
  if (norm <= 1e-300) return 0.0;
  if (g.is_dense()) return rel_l2_distance(g, adjoint(g));
  const int k = g.k();
  const double hd = g.grid().cell_volume();
  std::vector<SepTerm> diff = g.sep().terms;
  diff.reserve(2 * diff.size());
  for (std::size_t i = 0, r = diff.size(); i < r; ++i) {
    SepTerm t = diff[i];
    std::swap(t.ket, t.bra);
    t.c = -std::conj(t.c);
    diff.push_back(std::move(t));
  }
  dd::real d2;
  for (const SepTerm& a : diff)
    for (const SepTerm& b : diff)
      d2 = dd::add(d2, detail::term_inner_dd(a, b, k, hd).re);
  return std::sqrt(std::max(0.0, d2.hi)) / norm;
}

// ---------------------------------------------------------------------------
// Free flow and Fourier multipliers.
// ---------------------------------------------------------------------------

namespace detail {

// Apply a per-slot diagonal table to one slot of a dense kernel.
template <typename T>
inline void dense_apply_slot_table(DenseKernel& dk, int slot,
                                   const std::vector<T>& table) {
  const std::uint64_t N = dk.slot_points();
  std::uint64_t stride = 1;
  for (int s = 2 * dk.k - 1; s > slot; --s) stride *= N;
  const std::uint64_t block = stride * N;
  for (std::uint64_t base = 0; base < dk.a.size(); base += block)
    for (std::uint64_t j = 0; j < N; ++j) {
      cplx* p = dk.a.data() + base + j * stride;
      const T w = table[j];
      for (std::uint64_t off = 0; off < stride; ++off) p[off] *= w;
    }
}

// Forward or inverse FFT over every axis of one slot of a dense kernel.
inline void dense_fft_slot(DenseKernel& dk, int slot, bool inverse) {
  const GridSpec& g = dk.grid;
  const std::uint64_t N = dk.slot_points();
  std::uint64_t slot_stride = 1;
  for (int s = 2 * dk.k - 1; s > slot; --s) slot_stride *= N;
  std::uint64_t axis_stride = slot_stride;
  for (int axis = g.d - 1; axis >= 0; --axis) {
    fft_axis(dk.a.data(), dk.a.size(), g.n, axis_stride, inverse);
    axis_stride *= std::uint64_t(g.n);
  }
}

}  // namespace detail

// exp(i t Delta_hat): each unprimed slot gets the phase exp(-i t |omega|^2),
// each primed slot the conjugate. In the separable format both sides advance
// by the same one-body propagator; the stored-conjugate convention for bra
// factors supplies the primed-slot sign automatically.
inline DensityMatrix free_propagate(const DensityMatrix& g, double t) {
  const int k = g.k();
  if (!g.is_dense()) {
    SeparableKernel out = g.sep();
    const GridSpec& grid = out.grid;
    auto phase = slot_free_phase_table(grid, t);
    for (SepTerm& term : out.terms) {
      for (int j = 0; j < k; ++j) {
        fft_slot(term.ket[j].data(), grid, false);
        for (std::size_t i = 0; i < term.ket[j].size(); ++i)
          term.ket[j][i] *= phase[i];
        fft_slot(term.ket[j].data(), grid, true);
        fft_slot(term.bra[j].data(), grid, false);
        for (std::size_t i = 0; i < term.bra[j].size(); ++i)
          term.bra[j][i] *= phase[i];
        fft_slot(term.bra[j].data(), grid, true);
      }
    }
    return DensityMatrix(std::move(out));
  }
  DenseKernel out = g.dense();
  auto phase = slot_free_phase_table(out.grid, t);
  std::vector<cplx> conj_phase(phase.size());
  for (std::size_t i = 0; i < phase.size(); ++i) conj_phase[i] = std::conj(phase[i]);
  for (int slot = 0; slot < 2 * k; ++slot) {
    detail::dense_fft_slot(out, slot, false);
    detail::dense_apply_slot_table(out, slot, slot < k ? phase : conj_phase);
    detail::dense_fft_slot(out, slot, true);
  }
  return DensityMatrix(std::move(out));
}

// Diagonal Fourier multiplier on a dense kernel per MultiplierProfile.
inline DensityMatrix apply_multiplier(const DensityMatrix& g,
                                      const MultiplierProfile& prof) {
  if (!g.is_dense())
    throw state_error("apply_multiplier requires a dense kernel");
  if (!(prof.grid == g.grid()))
    throw shape_error("apply_multiplier: profile grid mismatch");
  if (prof.kind == MultiplierKind::free_phase)
    return free_propagate(g, prof.t);
  DenseKernel out = g.dense();
  auto tab = slot_bracket_table(out.grid, prof.alpha);
  for (int slot = 0; slot < 2 * out.k; ++slot) {
    detail::dense_fft_slot(out, slot, false);
    detail::dense_apply_slot_table(out, slot, tab);
    detail::dense_fft_slot(out, slot, true);
  }
  return DensityMatrix(std::move(out));
}

// S^{(k,alpha)} = prod over all 2k slots of <grad>^alpha. Works for both
// representations; the separable path applies the bracket to each factor
// (the weight is real and even, so bra factors take the same table).
inline DensityMatrix s_apply(const DensityMatrix& g, double alpha) {
  if (alpha == 0.0) return g;
  const int k = g.k();
  if (g.is_dense()) {
    MultiplierProfile prof;
    prof.kind = MultiplierKind::bracket;
    prof.alpha = alpha;
    prof.grid = g.grid();
    return apply_multiplier(g, prof);
  }
  SeparableKernel out = g.sep();
  const GridSpec& grid = out.grid;
  auto tab = slot_bracket_table(grid, alpha);
  for (SepTerm& term : out.terms) {
    for (int j = 0; j < k; ++j) {
      fft_slot(term.ket[j].data(), grid, false);
      for (std::size_t i = 0; i < term.ket[j].size(); ++i) term.ket[j][i] *= tab[i];
      fft_slot(term.ket[j].data(), grid, true);
      fft_slot(term.bra[j].data(), grid, false);
      for (std::size_t i = 0; i < term.bra[j].size(); ++i) term.bra[j][i] *= tab[i];
      fft_slot(term.bra[j].data(), grid, true);
    }
  }
  return DensityMatrix(std::move(out));
}

// Generator of the free flow: sum_j (-Laplacian_{x_j} + Laplacian_{x'_j}),
// so that i d/dt free_propagate(gamma, t) = kinetic_commutator(gamma) at
// t = 0. A sum over slots, so the separable term count grows by a factor 2k.
inline DensityMatrix kinetic_commutator(const DensityMatrix& g) {
  const int k = g.k();
  const GridSpec& grid = g.grid();
  const std::uint64_t N = grid.slot_points();
  if (g.is_dense()) {
    DenseKernel out = g.dense();
    for (int s = 0; s < 2 * k; ++s) detail::dense_fft_slot(out, s, false);
    for (std::uint64_t flat = 0; flat < out.a.size(); ++flat) {
      std::uint64_t rem = flat;
      double mult = 0;
      for (int s = 2 * k - 1; s >= 0; --s) {
        double w2 = slot_omega_sq(grid, rem % N);
        rem /= N;
        mult += s < k ? w2 : -w2;
      }
      out.a[flat] *= mult;
    }
    for (int s = 0; s < 2 * k; ++s) detail::dense_fft_slot(out, s, true);
    return DensityMatrix(std::move(out));
  }
  auto apply_w2 = [&](std::vector<cplx> f, double sign) {
    fft_slot(f.data(), grid, false);
    for (std::uint64_t i = 0; i < N; ++i) f[i] *= sign * slot_omega_sq(grid, i);
    fft_slot(f.data(), grid, true);
    return f;
  };
  SeparableKernel out = sep_zero(grid, k);
  out.terms.reserve(2 * k * g.sep().terms.size());
  for (const SepTerm& t : g.sep().terms) {
    for (int j = 0; j < k; ++j) {
      SepTerm a = t;
      a.ket[j] = apply_w2(t.ket[j], 1.0);  // -Laplacian on x_j
      out.terms.push_back(std::move(a));
      SepTerm b = t;
      // +Laplacian on x'_j: the kernel holds conj(bra), so the stored factor
      // picks up the plain Laplacian, multiplier -|omega|^2.
      b.bra[j] = apply_w2(t.bra[j], -1.0);
      out.terms.push_back(std::move(b));
    }
  }
  return DensityMatrix(std::move(out));
}

// ---------------------------------------------------------------------------
// Bosonic symmetrization: average over permutations of the unprimed slots,
// then of the primed slots. k <= 4 keeps the k! passes cheap.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::vector<int>> permutations(int k) {
  std::vector<int> p(k);
  for (int i = 0; i < k; ++i) p[i] = i;
  std::vector<std::vector<int>> all;
  do {
    all.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return all;
}

}  // namespace detail

inline DensityMatrix bosonic_symmetrize(const DensityMatrix& g) {
  const int k = g.k();
  if (k > 4) throw capacity_error("bosonic_symmetrize supports k <= 4");
  if (k == 1) return g;
  if (!g.is_dense()) {
    // Permute factor lists per term; term count grows by k!^2 / (shared perms);
    // dense is the intended route, but small separable states are accepted.
    const SeparableKernel& sp = g.sep();
    auto perms = detail::permutations(k);
    SeparableKernel out = sep_zero(sp.grid, k);
    const double w = 1.0 / double(perms.size() * perms.size());
    for (const SepTerm& t : sp.terms)
      for (const auto& pu : perms)
        for (const auto& pv : perms) {
          SepTerm nt;
          nt.c = t.c * w;
          nt.ket.resize(k);
          nt.bra.resize(k);
          for (int j = 0; j < k; ++j) {
            nt.ket[pu[j]] = t.ket[j];
            nt.bra[pv[j]] = t.bra[j];
          }
          out.terms.push_back(std::move(nt));
        }
    return DensityMatrix(std::move(out));
  }
  const DenseKernel& in = g.dense();
  const std::uint64_t N = in.slot_points();
  auto perms = detail::permutations(k);
  auto average_group = [&](const DenseKernel& src, bool primed) {
    DenseKernel acc = dense_zero(src.grid, k);
    std::vector<std::uint64_t> idx(2 * k), pidx(2 * k);
    for (const auto& p : perms) {
      for (std::uint64_t flat = 0; flat < src.a.size(); ++flat) {
        std::uint64_t rem = flat;
        for (int s = 2 * k - 1; s >= 0; --s) {
          idx[s] = rem % N;
          rem /= N;
        }
        // Destination index: permute one slot group.
        for (int s = 0; s < 2 * k; ++s) pidx[s] = idx[s];
        if (!primed) {
          for (int s = 0; s < k; ++s) pidx[p[s]] = idx[s];
        } else {
          for (int s = 0; s < k; ++s) pidx[k + p[s]] = idx[k + s];
        }
        std::uint64_t dst = 0;
        for (int s = 0; s < 2 * k; ++s) dst = dst * N + pidx[s];
        acc.a[dst] += src.a[flat];
      }
    }
    const double w = 1.0 / double(perms.size());
    for (cplx& z : acc.a) z *= w;
    return acc;
  };
  DenseKernel stage1 = average_group(in, false);
  DenseKernel stage2 = average_group(stage1, true);
  return DensityMatrix(std::move(stage2));
}

// Relative defect || gamma - Sym gamma || / || gamma ||.
inline double bosonic_symmetry_defect(const DensityMatrix& g) {
  if (g.k() == 1) return 0.0;
  if (l2_norm(g) <= 1e-300) return 0.0;
  return rel_l2_distance(g, bosonic_symmetrize(g));
}

}  // namespace gph
