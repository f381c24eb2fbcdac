#pragma once

// Recompression of separable kernels.
//
// The term count of a SeparableKernel grows additively under contraction and
// time stepping while the true rank of the states we evolve stays small, so
// periodic recompression is what makes long runs affordable. All linear
// algebra here happens in coefficient space through slot Gram matrices; the
// full N^{2k} tensor is never formed.
//
//  * k = 1: kernels are plain matrices, so the optimal truncation is computed
//    exactly: eigendecompose the ket and bra Gram matrices, SVD the small
//    core, keep the leading singular values.
//
//  * k >= 2: alternating least squares over the 2k slot factor matrices,
//    seeded from the highest-energy terms and escalated in rank until the
//    relative L2 error meets the tolerance. The residual is monitored
//    exactly (again via Grams), so a returned kernel is never silently
//    worse than requested: if the tolerance cannot be met within max_rank
//    the original kernel is kept and the stats say so.

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <vector>

#include "common.hpp"
#include "density.hpp"

namespace gph {

struct CompressOptions {
  double rel_tol = 1e-13;  // relative L2 error budget
  int max_rank = 64;       // output term cap
  int max_sweeps = 18;     // ALS sweeps per rank attempt
  // When the tolerance cannot be met at max_rank, keep the input unchanged
  // (true) or return the best truncation found (false).
  bool keep_on_fail = true;
};

struct CompressStats {
  double rel_error = 0.0;
  int rank = 0;
  bool met_tol = true;
  int sweeps = 0;
};

namespace detail {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

inline MatrixXcd factor_matrix(const SeparableKernel& s, int slot, bool ket) {
  const std::uint64_t N = s.grid.slot_points();
  MatrixXcd F(N, s.terms.size());
  for (std::size_t m = 0; m < s.terms.size(); ++m) {
    const auto& f = ket ? s.terms[m].ket[slot] : s.terms[m].bra[slot];
    for (std::uint64_t x = 0; x < N; ++x) F(x, m) = f[x];
  }
  return F;
}

inline MatrixXcd gram(const MatrixXcd& F, double hd) {
  return hd * (F.adjoint() * F);
}

// Moore-Penrose pseudoinverse of a Hermitian PSD matrix with a relative
// eigenvalue floor.
inline MatrixXcd hermitian_pinv(const MatrixXcd& E, double floor_rel = 1e-13) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(E);
  const VectorXd& ev = es.eigenvalues();
  double lmax = ev.size() ? std::max(0.0, ev(ev.size() - 1)) : 0.0;
  double floor = lmax * floor_rel;
  VectorXd inv(ev.size());
  for (int i = 0; i < ev.size(); ++i)
    inv(i) = ev(i) > floor && ev(i) > 0 ? 1.0 / ev(i) : 0.0;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().adjoint();
}

// Factorization G = R^H R for Hermitian PSD G with eigenvalue flooring.
// Rows of R are coordinates in an (implicit) orthonormal basis; also returns
// the basis-combination matrix A with Q = F * A for rebuilding vectors.
struct gram_root {
  MatrixXcd R;  // rank x T
  MatrixXcd A;  // T x rank, Q = F A has orthonormal columns
};

inline gram_root gram_factor(const MatrixXcd& G, double floor_rel = 1e-28) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(G);
  const VectorXd& ev = es.eigenvalues();
  double lmax = ev.size() ? std::max(0.0, ev(ev.size() - 1)) : 0.0;
  double floor = std::max(lmax * floor_rel, 0.0);
  std::vector<int> keep;
  for (int i = ev.size() - 1; i >= 0; --i)
    if (ev(i) > floor && ev(i) > 0) keep.push_back(i);
  gram_root out;
  out.R.resize(keep.size(), G.rows());
  out.A.resize(G.rows(), keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    double s = std::sqrt(ev(keep[r]));
    out.R.row(r) = s * es.eigenvectors().col(keep[r]).adjoint();
    out.A.col(r) = es.eigenvectors().col(keep[r]) / s;
  }
  return out;
}

inline SeparableKernel exact_compress_k1(const SeparableKernel& s,
                                         const CompressOptions& opts,
                                         CompressStats& stats) {
  const double hd = s.grid.cell_volume();
  const int T = int(s.terms.size());
  MatrixXcd Fk = factor_matrix(s, 0, true);
  MatrixXcd Fb = factor_matrix(s, 0, false);
  VectorXcd c(T);
  for (int m = 0; m < T; ++m) c(m) = s.terms[m].c;
  gram_root ru = gram_factor(gram(Fk, hd));
  gram_root rv = gram_factor(gram(Fb, hd));
  MatrixXcd M = ru.R * c.asDiagonal() * rv.R.adjoint();
  Eigen::JacobiSVD<MatrixXcd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sig = svd.singularValues();
  // Suffix sums from the smallest singular value up, so a full-rank keep has
  // an exactly zero tail.
  const int S = int(sig.size());
  std::vector<double> tails(S + 1, 0.0);
  for (int i = S - 1; i >= 0; --i) tails[i] = tails[i + 1] + sig(i) * sig(i);
  const double total2 = tails[0];
  if (total2 <= 1e-300) {
    stats = {0.0, 0, true, 0};
    return sep_zero(s.grid, 1);
  }
  const double budget = opts.rel_tol * opts.rel_tol * total2;
  int R = 0;
  while (R < S && tails[R] > budget) ++R;
  if (R > opts.max_rank) R = opts.max_rank;
  stats.rank = R;
  stats.rel_error = std::sqrt(tails[R] / total2);
  stats.met_tol = tails[R] <= budget;
  stats.sweeps = 0;
  MatrixXcd newKet = Fk * (ru.A * svd.matrixU().leftCols(R));
  MatrixXcd newBra = Fb * (rv.A * svd.matrixV().leftCols(R));
  SeparableKernel out = sep_zero(s.grid, 1);
  out.terms.reserve(R);
  for (int i = 0; i < R; ++i) {
    SepTerm t;
    t.c = sig(i);
    t.ket.resize(1);
    t.bra.resize(1);
    t.ket[0].assign(newKet.col(i).data(), newKet.col(i).data() + newKet.rows());
    t.bra[0].assign(newBra.col(i).data(), newBra.col(i).data() + newBra.rows());
    out.terms.push_back(std::move(t));
  }
  return out;
}

struct als_state {
  std::vector<MatrixXcd> A;  // k ket factor matrices, N x R
  std::vector<MatrixXcd> B;  // k bra factor matrices, N x R
};

// Relative error of the ALS model against the original kernel, computed via
// cross Grams; also returns the pieces needed by the slot solves.
struct als_workspace {
  std::vector<MatrixXcd> KA, KB;    // R x R reduced slot Grams
  std::vector<MatrixXcd> CK, CB;    // R x T cross Grams against the original
};

inline void refresh_workspace(const als_state& st,
                              const std::vector<MatrixXcd>& Fk,
                              const std::vector<MatrixXcd>& Fb, double hd,
                              als_workspace& w) {
  const int k = int(st.A.size());
  w.KA.resize(k);
  w.KB.resize(k);
  w.CK.resize(k);
  w.CB.resize(k);
  for (int j = 0; j < k; ++j) {
    w.KA[j] = hd * (st.A[j].adjoint() * st.A[j]);
    w.KB[j] = hd * (st.B[j].adjoint() * st.B[j]);
    w.CK[j] = hd * (st.A[j].adjoint() * Fk[j]);
    w.CB[j] = hd * (st.B[j].adjoint() * Fb[j]);
  }
}

struct residual_info {
  double err2 = 0.0;        // absolute squared L2 error, clamped at zero
  double model_mass = 0.0;  // sum of model term norms
};

inline residual_info model_residual(const als_workspace& w, const VectorXcd& c,
                                    double norm2, int k) {
  const int R = int(w.KA[0].rows());
  const int T = int(c.size());
  // ||model||^2
  MatrixXcd GM = MatrixXcd::Ones(R, R);
  for (int j = 0; j < k; ++j)
    GM = GM.cwiseProduct(w.KA[j]).cwiseProduct(w.KB[j].conjugate());
  double m2 = GM.sum().real();
  // <gamma, model>
  MatrixXcd CM = MatrixXcd::Ones(R, T);
  for (int j = 0; j < k; ++j)
    CM = CM.cwiseProduct(w.CK[j].conjugate()).cwiseProduct(w.CB[j]);
  cplx cross(0, 0);
  for (int r = 0; r < R; ++r)
    for (int m = 0; m < T; ++m) cross += std::conj(c(m)) * CM(r, m);
  residual_info out;
  out.err2 = std::max(0.0, norm2 - 2.0 * cross.real() + m2);
  for (int r = 0; r < R; ++r) {
    double v = 1.0;
    for (int j = 0; j < k; ++j)
      v *= w.KA[j](r, r).real() * w.KB[j](r, r).real();
    out.model_mass += std::sqrt(std::max(0.0, v));
  }
  return out;
}

}  // namespace detail

// Drop terms that are exactly zero or denormal-tiny relative to the largest
// term. Anything larger is left for the SVD/ALS stages, which monitor the
// truncation error exactly; a norm-based cut here could over-prune kernels
// whose terms nearly cancel.
inline SeparableKernel sep_prune(const SeparableKernel& s, double /*rel_tol*/) {
  const int k = s.k;
  const double hd = s.grid.cell_volume();
  std::vector<double> e(s.terms.size());
  double max_e = 0.0;
  for (std::size_t m = 0; m < s.terms.size(); ++m) {
    double v = std::norm(s.terms[m].c);
    for (int j = 0; j < k; ++j) {
      v *= std::real(detail::slot_dot(s.terms[m].ket[j], s.terms[m].ket[j], hd));
      v *= std::real(detail::slot_dot(s.terms[m].bra[j], s.terms[m].bra[j], hd));
    }
    e[m] = std::sqrt(std::max(0.0, v));
    max_e = std::max(max_e, e[m]);
  }
  if (max_e <= 0.0) return sep_zero(s.grid, k);
  const double cut = max_e * 1e-150;
  SeparableKernel out = sep_zero(s.grid, k);
  for (std::size_t m = 0; m < s.terms.size(); ++m)
    if (e[m] > cut) out.terms.push_back(s.terms[m]);
  return out;
}

inline SeparableKernel compress(const SeparableKernel& input,
                                const CompressOptions& opts,
                                CompressStats* stats_out = nullptr) {
  using namespace detail;
  CompressStats stats;
  SeparableKernel s = sep_prune(input, opts.rel_tol);
  const int k = s.k;
  const int T = int(s.terms.size());
  if (T <= 1) {
    stats = {0.0, T, true, 0};
    if (stats_out) *stats_out = stats;
    return s;
  }
  if (k == 1) {
    SeparableKernel out = exact_compress_k1(s, opts, stats);
    if (!stats.met_tol && opts.keep_on_fail) {
      if (stats_out) *stats_out = stats;
      return input;
    }
    if (stats_out) *stats_out = stats;
    return out;
  }

  const double hd = s.grid.cell_volume();
  std::vector<MatrixXcd> Fk(k), Fb(k);
  std::vector<MatrixXcd> Kk(k), Kb(k);
  for (int j = 0; j < k; ++j) {
    Fk[j] = factor_matrix(s, j, true);
    Fb[j] = factor_matrix(s, j, false);
    Kk[j] = gram(Fk[j], hd);
    Kb[j] = gram(Fb[j], hd);
  }
  VectorXcd c(T);
  for (int m = 0; m < T; ++m) c(m) = s.terms[m].c;
  MatrixXcd G = MatrixXcd::Ones(T, T);
  for (int j = 0; j < k; ++j)
    G = G.cwiseProduct(Kk[j]).cwiseProduct(Kb[j].conjugate());
  double norm2 = std::max(0.0, (c.adjoint() * G * c)(0, 0).real());
  if (norm2 <= 1e-300) {
    stats = {0.0, 0, true, 0};
    if (stats_out) *stats_out = stats;
    return sep_zero(s.grid, k);
  }

  // Seed selection: greedy pivoted Cholesky on the coefficient-weighted term
  // Gram picks high-energy, mutually independent terms and stops when the
  // residual diagonal is numerically exhausted, revealing the effective rank.
  MatrixXcd Gw(T, T);
  for (int m = 0; m < T; ++m)
    for (int m2 = 0; m2 < T; ++m2)
      Gw(m, m2) = std::conj(c(m)) * c(m2) * G(m, m2);
  std::vector<int> order;
  {
    VectorXd diag(T);
    for (int m = 0; m < T; ++m) diag(m) = std::max(0.0, Gw(m, m).real());
    const double d0 = diag.maxCoeff();
    MatrixXcd L(T, std::min(T, opts.max_rank));
    for (int r = 0; r < L.cols(); ++r) {
      int pick = 0;
      double dbest = -1.0;
      for (int m = 0; m < T; ++m)
        if (diag(m) > dbest) {
          dbest = diag(m);
          pick = m;
        }
      if (dbest <= 1e-28 * d0) break;
      VectorXcd col = Gw.col(pick);
      for (int r2 = 0; r2 < r; ++r2) col -= L.col(r2) * std::conj(L(pick, r2));
      col /= std::sqrt(dbest);
      L.col(r) = col;
      for (int m = 0; m < T; ++m)
        diag(m) = std::max(0.0, diag(m) - std::norm(L(m, r)));
      order.push_back(pick);
    }
  }

  // Total term-norm mass; the residual is evaluated through Gram expansions
  // whose cancellation noise scales like eps times this mass squared, so the
  // tolerance check cannot honestly resolve errors below that floor.
  double input_mass = 0.0;
  for (int m = 0; m < T; ++m)
    input_mass += std::abs(c(m)) * std::sqrt(std::max(0.0, G(m, m).real()));
  const double eps_mach = 2.220446049250313e-16;

  const int rank_cap = std::max(1, int(order.size()));
  als_state best;
  double best_err2 = 4.0 * norm2 + 1.0;
  double best_accept2 = 0.0;
  int best_rank = 0;
  int total_sweeps = 0;

  for (int R = 1; R <= rank_cap; R = (R >= rank_cap ? rank_cap + 1 : std::min(2 * R, rank_cap))) {
    als_state st;
    st.A.assign(k, MatrixXcd(Fk[0].rows(), R));
    st.B.assign(k, MatrixXcd(Fk[0].rows(), R));
    const int npiv = int(order.size());
    for (int r = 0; r < R; ++r) {
      int m = order[r % npiv];
      for (int j = 0; j < k; ++j) {
        for (int x = 0; x < Fk[j].rows(); ++x) {
          st.A[j](x, r) = Fk[j](x, m);
          st.B[j](x, r) = Fb[j](x, m);
        }
      }
      st.A[0].col(r) *= c(m);
      if (r >= npiv) st.A[0].col(r) *= 1e-3;  // duplicate seeds, damped
    }
    als_workspace w;
    double prev_err2 = -1.0;
    double err2 = 2.0 * norm2;
    double accept2 = opts.rel_tol * opts.rel_tol * norm2;
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
      ++total_sweeps;
      for (int pass = 0; pass < 2 * k; ++pass) {
        const bool ket_side = pass < k;
        const int j = ket_side ? pass : pass - k;
        refresh_workspace(st, Fk, Fb, hd, w);
        MatrixXcd E = MatrixXcd::Ones(R, R);
        MatrixXcd W = MatrixXcd::Ones(R, T);
        for (int j2 = 0; j2 < k; ++j2) {
          if (ket_side && j2 == j) {
            E = E.cwiseProduct(w.KB[j2].conjugate());
            W = W.cwiseProduct(w.CB[j2].conjugate());
            continue;
          }
          if (!ket_side && j2 == j) {
            E = E.cwiseProduct(w.KA[j2]);
            W = W.cwiseProduct(w.CK[j2]);
            continue;
          }
          E = E.cwiseProduct(w.KA[j2]).cwiseProduct(w.KB[j2].conjugate());
          W = W.cwiseProduct(w.CK[j2]).cwiseProduct(w.CB[j2].conjugate());
        }
        MatrixXcd Einv = hermitian_pinv(E.conjugate());
        if (ket_side) {
          // RHS(x,r) = sum_m ket_mj(x) * c_m * prod(env cross terms)
          //          = (Fk[j] * Wc)(x,r), Wc(m,r) = c_m * W(r,m).
          MatrixXcd Wc(T, R);
          for (int m = 0; m < T; ++m)
            for (int r = 0; r < R; ++r) Wc(m, r) = c(m) * W(r, m);
          MatrixXcd X = Fk[j] * Wc * Einv;
          st.A[j] = X;
          if (j != 0) {
            for (int r = 0; r < R; ++r) {
              double nrm = std::sqrt(std::max(0.0, hd * st.A[j].col(r).squaredNorm()));
              if (nrm > 1e-300) {
                st.A[j].col(r) /= nrm;
                st.A[0].col(r) *= nrm;
              }
            }
          }
        } else {
          // Unknown is h_r(x') = conj(B_j(x',r)): RHS = conj(Fb[j]) * Wc with
          // Wc(m,r) = c_m * W(r,m).
          MatrixXcd Wc(T, R);
          for (int m = 0; m < T; ++m)
            for (int r = 0; r < R; ++r) Wc(m, r) = c(m) * W(r, m);
          MatrixXcd H = Fb[j].conjugate() * Wc * Einv;
          for (int r = 0; r < R; ++r) {
            double nrm = std::sqrt(std::max(0.0, hd * H.col(r).squaredNorm()));
            if (nrm > 1e-300) {
              st.B[j].col(r) = (H.col(r) / nrm).conjugate();
              st.A[0].col(r) *= nrm;
            } else {
              st.B[j].col(r) = H.col(r).conjugate();
            }
          }
        }
      }
      refresh_workspace(st, Fk, Fb, hd, w);
      residual_info res = model_residual(w, c, norm2, k);
      err2 = res.err2;
      double mass = input_mass + res.model_mass;
      double floor2 = 1024.0 * eps_mach * mass * mass;
      accept2 = std::max(opts.rel_tol * opts.rel_tol * norm2, floor2);
      if (err2 <= accept2) break;
      if (prev_err2 >= 0 && prev_err2 - err2 < 1e-4 * std::max(err2, accept2))
        break;
      prev_err2 = err2;
    }
    if (err2 < best_err2) {
      best = st;
      best_err2 = err2;
      best_accept2 = accept2;
      best_rank = R;
    }
    if (best_err2 <= best_accept2) break;
  }

  stats.rel_error = std::sqrt(std::max(0.0, best_err2) / norm2);
  stats.rank = best_rank;
  stats.met_tol = best_err2 <= best_accept2;
  stats.sweeps = total_sweeps;
  if (!stats.met_tol && opts.keep_on_fail) {
    if (stats_out) *stats_out = stats;
    return input;
  }
  SeparableKernel out = sep_zero(s.grid, k);
  out.terms.reserve(best_rank);
  std::vector<double> out_nrm(best_rank, 0.0);
  double out_max = 0.0;
  for (int r = 0; r < best_rank; ++r) {
    out_nrm[r] = std::sqrt(std::max(0.0, hd * best.A[0].col(r).squaredNorm()));
    out_max = std::max(out_max, out_nrm[r]);
  }
  for (int r = 0; r < best_rank; ++r) {
    SepTerm t;
    double nrm = out_nrm[r];
    if (nrm <= 1e-14 * out_max) continue;  // dead seed columns
    t.c = nrm;
    t.ket.resize(k);
    t.bra.resize(k);
    for (int j = 0; j < k; ++j) {
      Eigen::VectorXcd col = j == 0 ? (best.A[0].col(r) / nrm).eval()
                                    : best.A[j].col(r).eval();
      t.ket[j].assign(col.data(), col.data() + col.size());
      Eigen::VectorXcd bcol = best.B[j].col(r);
      t.bra[j].assign(bcol.data(), bcol.data() + bcol.size());
    }
    out.terms.push_back(std::move(t));
  }
  if (stats_out) *stats_out = stats;
  return out;
}

inline DensityMatrix compress(const DensityMatrix& g, const CompressOptions& opts,
                              CompressStats* stats = nullptr) {
  if (g.is_dense()) {
    if (stats) *stats = {0.0, -1, true, 0};
    return g;
  }
  return DensityMatrix(compress(g.sep(), opts, stats));
}

}  // namespace gph
