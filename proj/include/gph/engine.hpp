// Time evolution of the truncated hierarchy: direct split-step integration,
// the coupled (Gamma, Xi) fixed-point solver, and Duhamel-iterate evaluation.
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "compress.hpp"
#include "density.hpp"
#include "hierarchy.hpp"
#include "norms.hpp"

namespace gph {

// ---------------------------------------------------------------------------
// Free flow of a whole hierarchy. Stored top marginals are left at their
// capture time; the free closure re-propagates them from free_t0 on demand.
// ---------------------------------------------------------------------------

inline HierarchyState free_propagate(const HierarchyState& st, double t) {
  HierarchyState out = st;
  for (DensityMatrix& g : out.levels) g = free_propagate(g, t);
  out.t += t;
  return out;
}

namespace detail {

// a += w * x, materializing separable increments when the target is dense.
inline void accumulate(DensityMatrix& acc, const DensityMatrix& x, cplx w) {
  if (acc.repr() == x.repr()) {
    add_scaled(acc, x, w);
    return;
  }
  if (acc.is_dense()) {
    DensityMatrix xd{materialize(x)};
    add_scaled(acc, xd, w);
    return;
  }
  throw shape_error("accumulate: dense increment into a separable target");
}

// Running sum of scaled kernels with periodic recompression so separable
// term counts stay bounded during long quadrature loops.
struct kernel_accumulator {
  DensityMatrix acc;
  CompressOptions comp;
  int chunk_cap = 160;

  void add(const DensityMatrix& x, cplx w) {
    accumulate(acc, x, w);
    if (!acc.is_dense() && int(acc.sep().terms.size()) > chunk_cap)
      acc = compress(acc, comp);
  }

  DensityMatrix take() {
    if (!acc.is_dense() &&
        int(acc.sep().terms.size()) > std::max(1, comp.max_rank))
      acc = compress(acc, comp);
    return std::move(acc);
  }
};

inline double h_alpha_distance(const DensityMatrix& a, const DensityMatrix& b,
                               double alpha) {
  if (alpha == 0.0) return l2_distance(a, b);
  return l2_distance(s_apply(a, alpha), s_apply(b, alpha));
}

inline bool is_zero_sep(const DensityMatrix& g) {
  return !g.is_dense() && g.sep().terms.empty();
}

inline DensityMatrix zero_like(const DensityMatrix& model_kernel, int k) {
  if (model_kernel.is_dense())
    return DensityMatrix(dense_zero(model_kernel.grid(), k));
  return DensityMatrix(sep_zero(model_kernel.grid(), k));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Direct split step. Strang composition: half free flow, one explicit
// midpoint step of the coupling gamma^(k)' = -i mu B gamma^(k+p/2) with the
// closure supplying levels above the truncation, half free flow. The
// coupling increments are traceless, so the step conserves every trace up
// to compression error.
// ---------------------------------------------------------------------------

struct StepOptions {
  CompressOptions comp{1e-12, 48, 18, true};
  bool couple = true;
  bool compress_levels = true;
  double dt_cap = std::numeric_limits<double>::infinity();
  // Dominance gate for the factorized closure inside a step; midpoint stages
  // sit O(dt) away from rank one, so the strict data gate does not apply.
  double closure_gate = 10.0;
};

inline HierarchyState step_direct(const HierarchyState& st, double dt,
                                  const StepOptions& opts = {}) {
  st.validate();
  if (!std::isfinite(dt)) throw argument_error("step_direct: dt must be finite");
  if (std::abs(dt) > opts.dt_cap)
    throw argument_error("step_direct: dt exceeds the configured cap");
  if (dt == 0.0) return st;

  HierarchyState a = free_propagate(st, dt / 2);
  if (opts.couple) {
    const cplx c = -I * st.model.mu;
    const std::vector<DensityMatrix> d1 = apply_B_hat(a, opts.closure_gate);
    HierarchyState mid = a;
    for (int i = 0; i < st.K(); ++i)
      detail::accumulate(mid.levels[i], d1[i], c * (dt / 2));
    const std::vector<DensityMatrix> d2 = apply_B_hat(mid, opts.closure_gate);
    for (int i = 0; i < st.K(); ++i)
      detail::accumulate(a.levels[i], d2[i], c * dt);
  }
  HierarchyState out = free_propagate(a, dt / 2);
  if (opts.compress_levels) {
    for (DensityMatrix& g : out.levels)
      if (!g.is_dense()) g = compress(g, opts.comp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory records.
// ---------------------------------------------------------------------------

struct RunRow {
  double t = 0.0;
  std::vector<double> level_h;      // H^alpha norm per level
  std::vector<double> level_trace;  // Re Tr per level
  double hnorm_xi1 = 0.0;
  double hnorm_xi2 = 0.0;
  double herm = 0.0;  // worst hermiticity defect across levels
  double admiss = std::numeric_limits<double>::quiet_NaN();
  double bhat_h = std::numeric_limits<double>::quiet_NaN();
  double bhat_trace = std::numeric_limits<double>::quiet_NaN();
};

struct Trajectory {
  ModelParams model;
  Closure closure = Closure::zero;
  double dt = 0.0;
  double t0 = 0.0;
  double alpha = 1.0;
  double xi1 = 0.5;
  double xi2 = 0.125;
  double compress_tol = 0.0;
  std::uint64_t seed = 0;

  std::vector<RunRow> rows;
  std::vector<double> snap_times;
  std::vector<HierarchyState> snapshots;
  std::vector<BhatSample> xi;
  HierarchyState final_state;

  void validate_time_grid() const {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double step = rows[i].t - rows[i - 1].t;
      if (!(step > 0)) throw state_error("trajectory time grid not increasing");
      const double ref = rows[1].t - rows[0].t;
      if (std::abs(step - ref) > 1e-9 * std::max(1.0, std::abs(ref)))
        throw state_error("trajectory time grid not uniform");
    }
  }
};

struct EngineOptions {
  double dt = 1e-3;
  int steps = 1;
  bool couple = true;
  CompressOptions comp{1e-12, 48, 18, true};
  double alpha = 1.0;
  double xi1 = 0.5;
  double eta = 0.25;  // xi2 = eta * xi1
  int record_stride = 1;
  int snapshot_stride = 0;  // 0: keep only the final state
  bool record_admissibility = true;
  bool record_bhat = true;
  double dt_cap = std::numeric_limits<double>::infinity();
  double closure_gate = 10.0;
  // Demanded of gamma^(1) at t=0 when the closure is factorized, so runs on
  // visibly mixed data fail fast instead of drifting.
  double initial_gate = 1e4;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(dt > 0) || !std::isfinite(dt))
      throw config_error("engine dt must be positive");
    if (steps < 0) throw config_error("engine steps must be nonnegative");
    if (!(xi1 > 0 && xi1 < 1)) throw config_error("engine xi1 must be in (0,1)");
    if (!(eta > 0 && eta <= 1)) throw config_error("engine eta must be in (0,1]");
    if (alpha < 0) throw config_error("engine alpha must be nonnegative");
    if (record_stride < 1) throw config_error("engine record stride must be >= 1");
    if (snapshot_stride < 0)
      throw config_error("engine snapshot stride must be >= 0");
  }
};

namespace detail {

inline RunRow record_row(const HierarchyState& st, const EngineOptions& opts) {
  RunRow row;
  row.t = st.t;
  const int K = st.K();
  row.level_h.resize(K);
  row.level_trace.resize(K);
  row.herm = 0.0;
  for (int k = 1; k <= K; ++k) {
    row.level_h[k - 1] = h_alpha_norm(st.level(k), opts.alpha);
    row.level_trace[k - 1] = trace(st.level(k)).real();
    row.herm = std::max(row.herm, hermiticity_defect(st.level(k)));
  }
  const double xi2 = opts.eta * opts.xi1;
  row.hnorm_xi1 = hierarchy_norm(st, opts.xi1, opts.alpha).total;
  row.hnorm_xi2 = hierarchy_norm(st, xi2, opts.alpha).total;
  if (opts.record_admissibility && K >= 1 + st.model.extras())
    row.admiss = check_admissible(st, 1.0).max_residual;
  if (opts.record_bhat) {
    const std::vector<DensityMatrix> b = apply_B_hat(st, opts.closure_gate);
    row.bhat_h = sequence_h_norm(b, xi2, opts.alpha).total;
    double bt = 0.0;
    for (const DensityMatrix& g : b) bt = std::max(bt, std::abs(trace(g)));
    row.bhat_trace = bt;
  }
  return row;
}

}  // namespace detail

inline Trajectory run_direct(const HierarchyState& g0,
                             const EngineOptions& opts) {
  opts.validate();
  g0.validate();
  if (g0.closure == Closure::factorized)
    rank1_extract(g0.level(1), opts.initial_gate);

  StepOptions step;
  step.comp = opts.comp;
  step.couple = opts.couple;
  step.dt_cap = opts.dt_cap;
  step.closure_gate = opts.closure_gate;

  Trajectory traj;
  traj.model = g0.model;
  traj.closure = g0.closure;
  traj.dt = opts.dt;
  traj.t0 = g0.t;
  traj.alpha = opts.alpha;
  traj.xi1 = opts.xi1;
  traj.xi2 = opts.eta * opts.xi1;
  traj.compress_tol = opts.comp.rel_tol;
  traj.seed = opts.seed;

  HierarchyState cur = g0;
  for (int s = 0; s <= opts.steps; ++s) {
    if (s > 0) cur = step_direct(cur, opts.dt, step);
    if (s % opts.record_stride == 0 || s == opts.steps)
      traj.rows.push_back(detail::record_row(cur, opts));
    if (opts.snapshot_stride > 0 &&
        (s % opts.snapshot_stride == 0 || s == opts.steps)) {
      traj.snap_times.push_back(cur.t);
      traj.snapshots.push_back(cur);
    }
  }
  traj.final_state = std::move(cur);
  return traj;
}

// ---------------------------------------------------------------------------
// Picard fixed point for Xi = B-hat Gamma. The iteration map is
//   Xi'(t_i) = B-hat e^{i t_i D} Gamma_0
//              - i mu Quad_{s<=t_i} B-hat e^{i (t_i - s) D} Xi(s)
// with trapezoid quadrature in s. Entries of Xi above level K - p/2 have no
// stored source level, so only the data term feeds them; the closure of
// Gamma_0 enters through that term.
// ---------------------------------------------------------------------------

struct PicardConfig {
  double T = 0.05;
  int M = 32;  // samples at t_i = i T / M, i = 0..M
  int max_iters = 24;
  double tol = 1e-7;  // successive-iterate distance in L1_t H^alpha_xi2
  double xi1 = 0.5;
  double eta = 0.25;
  double alpha = 1.0;
  CompressOptions comp{1e-10, 48, 18, false};
  int chunk_cap = 160;
  double closure_gate = 1e6;

  double xi2() const { return eta * xi1; }

  void validate() const {
    if (!(T > 0) || !std::isfinite(T))
      throw config_error("picard horizon T must be positive");
    if (M < 1) throw config_error("picard sample count M must be >= 1");
    if (max_iters < 1) throw config_error("picard max_iters must be >= 1");
    if (!(tol > 0)) throw config_error("picard tol must be positive");
    if (!(xi1 > 0 && xi1 < 1))
      throw config_error("picard xi1 must be in (0,1)");
    if (!(eta > 0 && eta <= 1))
      throw config_error("picard eta must be in (0,1]");
    if (!(xi2() > 0 && xi2() <= xi1))
      throw config_error("picard weights need 0 < xi2 <= xi1");
    if (alpha < 0) throw config_error("picard alpha must be nonnegative");
  }
};

struct PicardResult {
  std::vector<double> times;
  std::vector<BhatSample> xi;
  std::vector<double> residuals;  // successive-iterate distances
  std::vector<double> factors;    // residual ratios
  int iters = 0;
  bool converged = false;
};

// First-iterate residual ratio: the cleanest estimate of the map's
// contraction factor, measured before compression noise matters.
inline double contraction_factor(const PicardResult& r) {
  if (r.factors.empty())
    throw state_error("no contraction factors were measured");
  return r.factors.front();
}

inline PicardResult solve_xi_fixed_point(const HierarchyState& g0,
                                         const PicardConfig& cfg) {
  cfg.validate();
  g0.validate();
  const int K = g0.K();
  const int q = g0.model.extras();
  const double mu = g0.model.mu;
  const int M = cfg.M;

  PicardResult res;
  res.times.resize(M + 1);
  for (int i = 0; i <= M; ++i) res.times[i] = cfg.T * i / M;

  // Data term, computed once.
  std::vector<BhatSample> bfree(M + 1);
  for (int i = 0; i <= M; ++i) {
    bfree[i].t = res.times[i];
    bfree[i].entries =
        apply_B_hat(free_propagate(g0, res.times[i]), cfg.closure_gate);
  }

  std::vector<BhatSample> cur(M + 1);
  for (int i = 0; i <= M; ++i) {
    cur[i].t = res.times[i];
    for (int k = 1; k <= K; ++k)
      cur[i].entries.push_back(detail::zero_like(g0.levels.front(), k));
  }

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    std::vector<BhatSample> next(M + 1);
    for (int i = 0; i <= M; ++i) {
      next[i].t = res.times[i];
      next[i].entries.reserve(K);
      for (int k = 1; k <= K; ++k) {
        if (k + q > K || i == 0) {
          next[i].entries.push_back(bfree[i].entries[k - 1]);
          continue;
        }
        detail::kernel_accumulator acc;
        acc.comp = cfg.comp;
        acc.chunk_cap = cfg.chunk_cap;
        acc.acc = bfree[i].entries[k - 1];
        const std::vector<double> w = trapezoid_weights(i + 1, res.times[i]);
        for (int s = 0; s <= i; ++s) {
          const DensityMatrix& src = cur[s].entries[k + q - 1];
          if (detail::is_zero_sep(src)) continue;
          DensityMatrix y = free_propagate(src, res.times[i] - res.times[s]);
          acc.add(apply_B_full(y, g0.model), -I * mu * w[s]);
        }
        next[i].entries.push_back(acc.take());
      }
    }

    const std::vector<double> wt = trapezoid_weights(M + 1, cfg.T);
    double dist = 0.0;
    for (int i = 0; i <= M; ++i) {
      double di = 0.0;
      double xik = 1.0;
      for (int k = 1; k <= K; ++k) {
        xik *= cfg.xi2();
        di += xik * detail::h_alpha_distance(next[i].entries[k - 1],
                                             cur[i].entries[k - 1], cfg.alpha);
      }
      dist += wt[i] * di;
    }
    res.residuals.push_back(dist);
    if (res.residuals.size() > 1) {
      const double prev = res.residuals[res.residuals.size() - 2];
      res.factors.push_back(prev > 0 ? dist / prev : 0.0);
    }
    cur = std::move(next);
    res.iters = iter;
    if (dist < cfg.tol) {
      res.converged = true;
      break;
    }
  }

  if (!res.converged) {
    std::string msg = "fixed point did not reach tol " +
                      format_double(cfg.tol) + " in " +
                      std::to_string(cfg.max_iters) + " iterations; factors:";
    for (double f : res.factors) msg += " " + format_double(f);
    throw convergence_error(msg, res.factors);
  }
  res.xi = std::move(cur);
  return res;
}

// ---------------------------------------------------------------------------
// Gamma from Xi: levelwise Duhamel quadrature
//   gamma^(k)(t_i) = e^{i t_i D} gamma0^(k)
//                    - i mu Quad_{s<=t_i} e^{i (t_i - s) D} Xi^(k)(s).
// ---------------------------------------------------------------------------

struct IntegrateOptions {
  CompressOptions comp{1e-10, 48, 18, false};
  int chunk_cap = 160;
  double alpha = 1.0;
  double xi1 = 0.5;
  double eta = 0.25;
  bool record_rows = true;
};

inline Trajectory integrate_gamma_from_xi(const HierarchyState& g0,
                                          const std::vector<BhatSample>& xi,
                                          const IntegrateOptions& opts = {}) {
  g0.validate();
  if (xi.size() < 2)
    throw argument_error("integrate_gamma_from_xi: need at least two samples");
  const int K = g0.K();
  const int M = int(xi.size()) - 1;
  const double t0 = xi.front().t;
  const double dt = (xi.back().t - t0) / M;
  if (!(dt > 0))
    throw argument_error("integrate_gamma_from_xi: times must increase");
  for (int i = 0; i <= M; ++i) {
    if (std::abs(xi[i].t - (t0 + dt * i)) > 1e-9 * std::max(1.0, dt * M))
      throw argument_error("integrate_gamma_from_xi: time grid not uniform");
    if (int(xi[i].entries.size()) != K)
      throw argument_error("integrate_gamma_from_xi: sample level count");
    for (const DensityMatrix& g : xi[i].entries)
      if (!(g.grid() == g0.grid()))
        throw argument_error("integrate_gamma_from_xi: grid mismatch");
  }
  if (std::abs(g0.t - t0) > 1e-12 * std::max(1.0, std::abs(t0)))
    throw argument_error("integrate_gamma_from_xi: data time != first sample");

  const double mu = g0.model.mu;
  EngineOptions rec;
  rec.dt = dt;
  rec.alpha = opts.alpha;
  rec.xi1 = opts.xi1;
  rec.eta = opts.eta;
  rec.record_bhat = false;

  Trajectory traj;
  traj.model = g0.model;
  traj.closure = g0.closure;
  traj.dt = dt;
  traj.t0 = t0;
  traj.alpha = opts.alpha;
  traj.xi1 = opts.xi1;
  traj.xi2 = opts.eta * opts.xi1;
  traj.compress_tol = opts.comp.rel_tol;
  traj.xi = xi;

  for (int i = 0; i <= M; ++i) {
    HierarchyState st;
    st.model = g0.model;
    st.closure = g0.closure;
    st.free_top = g0.free_top;
    st.free_t0 = g0.free_t0;
    st.t = xi[i].t;
    const double ti = xi[i].t - t0;
    const std::vector<double> w =
        i > 0 ? trapezoid_weights(i + 1, ti) : std::vector<double>{0.0};
    for (int k = 1; k <= K; ++k) {
      detail::kernel_accumulator acc;
      acc.comp = opts.comp;
      acc.chunk_cap = opts.chunk_cap;
      acc.acc = free_propagate(g0.level(k), ti);
      for (int s = 0; s <= i; ++s) {
        const DensityMatrix& src = xi[s].entries[k - 1];
        if (i == 0 || detail::is_zero_sep(src)) continue;
        acc.add(free_propagate(src, xi[i].t - xi[s].t), -I * mu * w[s]);
      }
      st.levels.push_back(acc.take());
    }
    if (opts.record_rows) traj.rows.push_back(detail::record_row(st, rec));
    traj.snap_times.push_back(st.t);
    traj.snapshots.push_back(std::move(st));
  }
  traj.final_state = traj.snapshots.back();
  return traj;
}

// ---------------------------------------------------------------------------
// Duhamel iterates. The j-fold simplex integral over 0 < t_j < .. < t_1 < t
// is mapped to the unit cube by t_1 = t u_1, t_2 = t_1 u_2, ...; the
// Jacobian is t^j prod_i u_i^{j-i}.
// ---------------------------------------------------------------------------

struct SimplexNode {
  std::vector<double> times;  // t_1 >= t_2 >= ... >= t_j
  double weight = 1.0;
};

inline std::vector<SimplexNode> simplex_quadrature(int j, int Q, double t) {
  if (j < 0) throw argument_error("simplex_quadrature: negative depth");
  if (j == 0) return {SimplexNode{{}, 1.0}};
  if (Q < 1) throw argument_error("simplex_quadrature: need Q >= 1");
  const quad_rule gl = gauss_legendre_01(Q);
  std::vector<SimplexNode> nodes;
  nodes.reserve(std::size_t(std::pow(double(Q), j)));
  std::vector<int> digit(j, 0);
  for (;;) {
    SimplexNode nd;
    nd.times.resize(j);
    double w = 1.0, prev = t;
    for (int i = 0; i < j; ++i) {
      const double u = gl.nodes[digit[i]];
      w *= gl.weights[digit[i]];
      if (i + 1 < j) w *= std::pow(u, j - 1 - i);
      prev *= u;
      nd.times[i] = prev;
    }
    nd.weight = w * std::pow(t, j);
    nodes.push_back(std::move(nd));
    int c = j - 1;
    while (c >= 0 && ++digit[c] == Q) digit[c--] = 0;
    if (c < 0) break;
  }
  return nodes;
}

// Integrand of the labeled Duhamel term at a fixed simplex point: alternating
// free flows and single contractions, label i targeting slot mu(i) of the
// stage-i output. labels.front() is the outermost contraction, landing on
// level k+1. No (-i mu)^j coefficient; callers supply it.
inline DensityMatrix duhamel_integrand(const HierarchyState& st, int k,
                                       const std::vector<int>& labels,
                                       double t,
                                       const std::vector<double>& times,
                                       double closure_gate = 1e6) {
  const int j = int(labels.size());
  const int q = st.model.extras();
  if (int(times.size()) != j)
    throw argument_error("duhamel_integrand: labels/times length mismatch");
  if (k < 0) throw argument_error("duhamel_integrand: negative base level");
  for (int i = 0; i < j; ++i) {
    const double hi = i == 0 ? t : times[i - 1];
    if (times[i] < 0 || times[i] > hi + 1e-12)
      throw argument_error("duhamel_integrand: times leave the simplex");
    if (labels[i] < 1 || labels[i] > k + 1 + i * q)
      throw argument_error("duhamel_integrand: label out of range");
  }
  DensityMatrix x = closure_marginal(st, k + 1 + j * q, closure_gate);
  if (j == 0) return free_propagate(x, t);
  x = free_propagate(x, times[j - 1]);
  for (int i = j - 1; i >= 0; --i) {
    x = apply_B_single(x, labels[i], st.model);
    const double up = i == 0 ? t : times[i - 1];
    x = free_propagate(x, up - times[i]);
  }
  return x;
}

struct DuhamelOptions {
  CompressOptions comp{1e-10, 64, 18, false};
  int chunk_cap = 192;
  double closure_gate = 1e6;
  // Materialize the accumulated level-(k+1) result densely when it fits the
  // memory budget; node chains still run in the input representation.
  bool prefer_dense_out = true;
};

inline DensityMatrix duhamel_term(const HierarchyState& st, int j, int k,
                                  double t, int Q,
                                  const DuhamelOptions& opts = {}) {
  st.validate();
  if (j < 0 || j > 3)
    throw argument_error("duhamel_term: depth must be between 0 and 3");
  if (k < 0) throw argument_error("duhamel_term: negative base level");
  if (t < 0) throw argument_error("duhamel_term: negative time");
  const int q = st.model.extras();
  if (j == 0)
    return free_propagate(closure_marginal(st, k + 1, opts.closure_gate), t);
  if (Q < 4) throw argument_error("duhamel_term: need Q >= 4");

  bool dense_out = st.levels.front().is_dense();
  if (!dense_out && opts.prefer_dense_out) {
    const GridSpec& g = st.grid();
    dense_out = dense_bytes(g.slot_points(), 2 * (k + 1)) <= memory_budget();
  }
  detail::kernel_accumulator acc;
  acc.comp = opts.comp;
  acc.chunk_cap = opts.chunk_cap;
  acc.acc = dense_out ? DensityMatrix(dense_zero(st.grid(), k + 1))
                      : DensityMatrix(sep_zero(st.grid(), k + 1));
  if (t == 0.0) return acc.take();

  cplx coeff(1, 0);
  for (int i = 0; i < j; ++i) coeff *= -I * st.model.mu;

  const DensityMatrix top =
      closure_marginal(st, k + 1 + j * q, opts.closure_gate);
  for (const SimplexNode& nd : simplex_quadrature(j, Q, t)) {
    DensityMatrix x = free_propagate(top, nd.times[j - 1]);
    for (int i = j - 1; i >= 0; --i) {
      x = apply_B_full(x, st.model);
      const double up = i == 0 ? t : nd.times[i - 1];
      x = free_propagate(x, up - nd.times[i]);
    }
    acc.add(x, coeff * nd.weight);
  }
  return acc.take();
}

}  // namespace gph
