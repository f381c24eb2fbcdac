#pragma once

// Truncated hierarchy states.
//
// A HierarchyState holds the marginals gamma^(1..K) of one model (p, mu) on a
// shared grid, together with a closure policy that synthesizes the marginals
// above the truncation depth whenever the contraction needs them:
//
//   zero        gamma^(K+j) := 0
//   free        gamma^(K+j) := free flow applied to stored initial top levels
//   factorized  gamma^(K+j) := |phi><phi|^{(K+j)} with phi extracted from
//               gamma^(1), which must be numerically rank one
//
// Admissibility (partial trace of gamma^(k+p/2) reproduces gamma^(k)) and a
// k = 1 positivity probe are reported, never enforced: truncation breaks both
// in general and the interesting question is by how much.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"
#include "compress.hpp"
#include "contraction.hpp"
#include "density.hpp"
#include "wavefunction.hpp"

namespace gph {

enum class Closure { zero, free_flow, factorized };

inline const char* closure_name(Closure c) {
  switch (c) {
    case Closure::zero: return "zero";
    case Closure::free_flow: return "free";
    case Closure::factorized: return "factorized";
  }
  return "?";
}

inline Closure closure_from_name(std::string_view s) {
  if (s == "zero") return Closure::zero;
  if (s == "free") return Closure::free_flow;
  if (s == "factorized") return Closure::factorized;
  throw config_error("unknown closure '" + std::string(s) +
                     "' (expected zero, free, or factorized)");
}

struct HierarchyState {
  ModelParams model;
  Closure closure = Closure::zero;
  double t = 0.0;
  std::vector<DensityMatrix> levels;  // levels[i] holds gamma^(i+1)

  // Top marginals gamma^(K+1 .. K+p/2) captured at time free_t0, used by the
  // free closure. Empty unless the state was built with that closure.
  std::vector<DensityMatrix> free_top;
  double free_t0 = 0.0;

  int K() const { return int(levels.size()); }

  const GridSpec& grid() const {
    if (levels.empty()) throw state_error("hierarchy has no levels");
    return levels.front().grid();
  }

  const DensityMatrix& level(int k) const {
    if (k < 1 || k > K()) throw argument_error("hierarchy level out of range");
    return levels[k - 1];
  }
  DensityMatrix& level(int k) {
    if (k < 1 || k > K()) throw argument_error("hierarchy level out of range");
    return levels[k - 1];
  }

  void validate() const {
    model.validate();
    if (levels.empty()) throw state_error("hierarchy has no levels");
    const GridSpec& g = levels.front().grid();
    for (int i = 0; i < K(); ++i) {
      if (levels[i].k() != i + 1)
        throw shape_error("hierarchy level " + std::to_string(i + 1) +
                          " stores a kernel of order " +
                          std::to_string(levels[i].k()));
      if (!(levels[i].grid() == g))
        throw shape_error("hierarchy levels use different grids");
    }
    for (std::size_t i = 0; i < free_top.size(); ++i) {
      if (free_top[i].k() != K() + int(i) + 1 || !(free_top[i].grid() == g))
        throw shape_error("stored top marginals do not extend the hierarchy");
    }
  }
};

// ---------------------------------------------------------------------------
// Construction.
// ---------------------------------------------------------------------------

inline HierarchyState hierarchy_zero(const GridSpec& grid, int K,
                                     const ModelParams& model,
                                     Closure closure = Closure::zero) {
  model.validate();
  if (K < 1) throw argument_error("hierarchy depth must be at least 1");
  HierarchyState st;
  st.model = model;
  st.closure = closure;
  for (int k = 1; k <= K; ++k)
    st.levels.emplace_back(sep_zero(grid, k));
  return st;
}

// Factorized hierarchy |phi><phi|^{(k)}, k = 1..K. With the free closure the
// top marginals K+1 .. K+p/2 are captured as initial data for later flows.
inline HierarchyState hierarchy_factorized(const WaveFunction& phi, int K,
                                           const ModelParams& model,
                                           Closure closure = Closure::factorized,
                                           Repr repr = Repr::separable) {
  model.validate();
  if (K < 1) throw argument_error("hierarchy depth must be at least 1");
  HierarchyState st;
  st.model = model;
  st.closure = closure;
  for (int k = 1; k <= K; ++k) st.levels.push_back(from_factorized(phi, k, repr));
  if (closure == Closure::free_flow) {
    for (int j = 1; j <= model.extras(); ++j)
      st.free_top.push_back(from_factorized(phi, K + j, repr));
    st.free_t0 = 0.0;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Rank-one extraction from a one-body kernel.
// ---------------------------------------------------------------------------

// Leading singular triplet of gamma^(1) interpreted as |phi><phi|. The ratio
// of the two largest singular values measures how far the kernel is from rank
// one; extraction demands ratio >= min_ratio. The returned phi reproduces the
// kernel as phi(x) conj phi(x'), with the global phase fixed by making the
// largest-magnitude entry real positive.
inline WaveFunction rank1_extract(const DensityMatrix& g1,
                                  double min_ratio = 1e6,
                                  double* ratio_out = nullptr) {
  using Eigen::MatrixXcd;
  using Eigen::VectorXcd;
  using Eigen::VectorXd;
  if (g1.k() != 1) throw shape_error("rank1_extract needs a one-body kernel");
  const GridSpec& grid = g1.grid();
  const std::uint64_t N = grid.slot_points();
  double s1 = 0, s2 = 0;
  VectorXcd u;
  if (g1.is_dense()) {
    const auto& a = g1.dense().a;
    MatrixXcd M(N, N);
    for (std::uint64_t x = 0; x < N; ++x)
      for (std::uint64_t y = 0; y < N; ++y) M(x, y) = a[x * N + y];
    Eigen::BDCSVD<MatrixXcd> svd(M, Eigen::ComputeThinU);
    s1 = svd.singularValues()(0);
    s2 = N > 1 ? svd.singularValues()(1) : 0.0;
    u = svd.matrixU().col(0);
    // Plain (unweighted) SVD: M = s1 u v^H with |u|_2 = 1, so phi = sqrt(s1) u
    // reproduces the entries directly.
  } else {
    const SeparableKernel& s = g1.sep();
    if (s.terms.empty()) throw state_error("rank1_extract: zero kernel");
    const double hd = grid.cell_volume();
    MatrixXcd Fk = detail::factor_matrix(s, 0, true);
    MatrixXcd Fb = detail::factor_matrix(s, 0, false);
    VectorXcd c(s.terms.size());
    for (std::size_t m = 0; m < s.terms.size(); ++m) c(m) = s.terms[m].c;
    detail::gram_root ru = detail::gram_factor(detail::gram(Fk, hd));
    detail::gram_root rv = detail::gram_factor(detail::gram(Fb, hd));
    MatrixXcd core = ru.R * c.asDiagonal() * rv.R.adjoint();
    Eigen::JacobiSVD<MatrixXcd> svd(core, Eigen::ComputeThinU);
    if (svd.singularValues().size() == 0)
      throw state_error("rank1_extract: zero kernel");
    s1 = svd.singularValues()(0);
    s2 = svd.singularValues().size() > 1 ? svd.singularValues()(1) : 0.0;
    // Weighted-unit left vector; phi = sqrt(s1_weighted) u still reproduces
    // the kernel entrywise because the h factors cancel between them.
    u = Fk * (ru.A * svd.matrixU().col(0));
  }
  if (s1 <= 1e-300) throw state_error("rank1_extract: zero kernel");
  double ratio = s2 > 0 ? s1 / s2 : std::numeric_limits<double>::infinity();
  if (ratio_out) *ratio_out = ratio;
  if (ratio < min_ratio)
    throw state_error("one-body kernel is not numerically rank one (s1/s2 = " +
                      std::to_string(ratio) + ")");
  std::uint64_t peak = 0;
  for (std::uint64_t x = 1; x < N; ++x)
    if (std::abs(u(x)) > std::abs(u(peak))) peak = x;
  cplx ph = u(peak);
  if (std::abs(ph) > 0) u *= std::conj(ph) / std::abs(ph);
  WaveFunction phi{grid, std::vector<cplx>(N)};
  const double amp = std::sqrt(s1);
  for (std::uint64_t x = 0; x < N; ++x) phi.v[x] = amp * u(x);
  return phi;
}

inline double rank1_ratio(const DensityMatrix& g1) {
  double ratio = 0;
  rank1_extract(g1, 0.0, &ratio);
  return ratio;
}

// ---------------------------------------------------------------------------
// Closure: marginals above the truncation depth.
// ---------------------------------------------------------------------------

// min_ratio gates the factorized closure's dominant-dyad extraction. The
// default demands essentially pure product data; integrators pass a looser
// gate because midpoint stages perturb gamma^(1) away from rank one by O(dt).
inline DensityMatrix closure_marginal(const HierarchyState& st, int k,
                                      double min_ratio = 1e6) {
  const int K = st.K();
  if (k <= K) return st.level(k);
  if (k > K + st.model.extras())
    throw argument_error("closure_marginal: level beyond truncation reach");
  switch (st.closure) {
    case Closure::zero:
      if (st.levels.front().is_dense())
        return DensityMatrix(dense_zero(st.grid(), k));
      return DensityMatrix(sep_zero(st.grid(), k));
    case Closure::free_flow: {
      const int idx = k - K - 1;
      if (idx >= int(st.free_top.size()))
        throw state_error("free closure has no stored top marginals");
      return free_propagate(st.free_top[idx], st.t - st.free_t0);
    }
    case Closure::factorized: {
      WaveFunction phi = rank1_extract(st.level(1), min_ratio);
      return from_factorized(phi, k,
                             st.levels.front().is_dense() ? Repr::dense
                                                          : Repr::separable);
    }
  }
  throw state_error("unknown closure");
}

// B-hat: entry k is B_{k+p/2} gamma^(k+p/2), k = 1..K, with marginals above
// the truncation supplied by the closure.
inline std::vector<DensityMatrix> apply_B_hat(const HierarchyState& st,
                                              double min_ratio = 1e6) {
  st.validate();
  const int K = st.K();
  std::vector<DensityMatrix> out;
  out.reserve(K);
  for (int k = 1; k <= K; ++k) {
    DensityMatrix top = closure_marginal(st, k + st.model.extras(), min_ratio);
    out.push_back(apply_B_full(top, st.model));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Admissibility report.
// ---------------------------------------------------------------------------

struct AdmissReport {
  double tol = 0;
  std::vector<int> ks;             // levels checked: k = 1 .. K - p/2
  std::vector<double> residuals;   // || Tr_{p/2} gamma^(k+p/2) - gamma^(k) ||
  std::vector<char> ok;            // residual <= tol
  bool pass = true;                // all residuals within tol
  double max_residual = 0;

  std::string to_json() const {
    std::string s = "{\"tol\":" + format_double(tol) + ",\"levels\":[";
    for (std::size_t i = 0; i < ks.size(); ++i)
      s += (i ? "," : "") + std::to_string(ks[i]);
    s += "],\"residuals\":[";
    for (std::size_t i = 0; i < residuals.size(); ++i)
      s += (i ? "," : "") + format_double(residuals[i]);
    s += "],\"pass\":";
    s += pass ? "true" : "false";
    s += ",\"max_residual\":" + format_double(max_residual) + "}";
    return s;
  }
};

inline AdmissReport check_admissible(const HierarchyState& st, double tol) {
  st.validate();
  const int q = st.model.extras();
  if (st.K() < 1 + q)
    throw argument_error("admissibility needs K >= 1 + p/2");
  AdmissReport rep;
  rep.tol = tol;
  for (int k = 1; k + q <= st.K(); ++k) {
    DensityMatrix traced = partial_trace(st.level(k + q), q);
    double r = l2_distance(traced, st.level(k));
    rep.ks.push_back(k);
    rep.residuals.push_back(r);
    rep.ok.push_back(r <= tol ? 1 : 0);
    rep.max_residual = std::max(rep.max_residual, r);
    if (r > tol) rep.pass = false;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Positivity probe for one-body kernels.
// ---------------------------------------------------------------------------

namespace detail {

// y = gamma . x under the h^d-weighted pairing, kernel hermitized on the fly:
// y = (A x + A^H x) / 2.
inline void herm_matvec(const DensityMatrix& g, const std::vector<cplx>& x,
                        std::vector<cplx>& y) {
  const std::uint64_t N = g.grid().slot_points();
  const double hd = g.grid().cell_volume();
  y.assign(N, cplx(0, 0));
  if (g.is_dense()) {
    const auto& a = g.dense().a;
    for (std::uint64_t i = 0; i < N; ++i) {
      cplx acc(0, 0);
      for (std::uint64_t j = 0; j < N; ++j)
        acc += (a[i * N + j] + std::conj(a[j * N + i])) * x[j];
      y[i] = 0.5 * hd * acc;
    }
    return;
  }
  for (const SepTerm& t : g.sep().terms) {
    cplx bx(0, 0), fx(0, 0);
    for (std::uint64_t j = 0; j < N; ++j) {
      bx += std::conj(t.bra[0][j]) * x[j];
      fx += std::conj(t.ket[0][j]) * x[j];
    }
    const cplx cf = 0.5 * hd * t.c * bx;
    const cplx cb = 0.5 * hd * std::conj(t.c) * fx;
    for (std::uint64_t j = 0; j < N; ++j)
      y[j] += cf * t.ket[0][j] + cb * t.bra[0][j];
  }
}

}  // namespace detail

// Smallest eigenvalue of the hermitized one-body operator, estimated by power
// iteration on c I - gamma with c above the spectral radius. A probe, not a
// certificate: clustered spectra converge slowly. Deterministic per seed.
inline double min_eigenvalue_probe(const DensityMatrix& g, int iters = 300,
                                   std::uint64_t seed = 0x706f736974ull) {
  if (g.k() != 1)
    throw argument_error("positivity probe handles one-body kernels only");
  const std::uint64_t N = g.grid().slot_points();
  const double hd = g.grid().cell_volume();
  rng64 rng(seed);
  auto wnorm = [&](const std::vector<cplx>& v) {
    double s = 0;
    for (const cplx& z : v) s += std::norm(z);
    return std::sqrt(hd * s);
  };
  auto wdot = [&](const std::vector<cplx>& a, const std::vector<cplx>& b) {
    cplx s(0, 0);
    for (std::uint64_t i = 0; i < N; ++i) s += std::conj(a[i]) * b[i];
    return hd * s;
  };
  std::vector<cplx> v(N), w(N);
  for (auto& z : v) z = rng.cnormal();
  double nv = wnorm(v);
  if (nv <= 0) throw numeric_error("degenerate probe vector");
  for (auto& z : v) z /= nv;
  // Spectral radius estimate.
  double rho = 0;
  for (int it = 0; it < iters; ++it) {
    detail::herm_matvec(g, v, w);
    double nw = wnorm(w);
    if (nw <= 1e-300) return 0.0;  // numerically the zero operator
    rho = std::abs(std::real(wdot(v, w)));
    for (std::uint64_t i = 0; i < N; ++i) v[i] = w[i] / nw;
  }
  const double c = 1.25 * rho + 1e-30;
  // Dominant eigenvalue of c I - gamma is c - lambda_min.
  for (auto& z : v) z = rng.cnormal();
  nv = wnorm(v);
  for (auto& z : v) z /= nv;
  double mu = 0;
  for (int it = 0; it < iters; ++it) {
    detail::herm_matvec(g, v, w);
    for (std::uint64_t i = 0; i < N; ++i) w[i] = c * v[i] - w[i];
    double nw = wnorm(w);
    if (nw <= 1e-300) break;
    mu = std::real(wdot(v, w));
    for (std::uint64_t i = 0; i < N; ++i) v[i] = w[i] / nw;
  }
  return c - mu;
}

}  // namespace gph
