#pragma once

// Marginal and hierarchy norms.
//
// The one-kernel building block is || S^(k,alpha) gamma ||_{L2}, the L2 norm
// after the bracket multiplier <grad>^alpha has been applied to every slot,
// primed and unprimed. Hierarchy norms weight level k by xi^k; their growth
// in k estimates the per-particle energy Av as the reciprocal radius of
// convergence of that power series.

#include <cmath>
#include <string>
#include <vector>

#include "common.hpp"
#include "density.hpp"
#include "hierarchy.hpp"

namespace gph {

// || S^(k,alpha) gamma ||_{L2}, the doubled-space L2 norm (weight h^{2dk}).
inline double h_alpha_norm(const DensityMatrix& g, double alpha) {
  if (alpha < 0) throw argument_error("h_alpha_norm needs alpha >= 0");
  if (alpha == 0.0) return l2_norm(g);
  return l2_norm(s_apply(g, alpha));
}

// Discrete L^r norm over the doubled space: (h^{2dk} sum |gamma|^r)^(1/r).
// r = 2 is representation-agnostic; other r need the dense entries.
inline double lr_norm(const DensityMatrix& g, double r) {
  if (r < 1) throw argument_error("lr_norm needs r >= 1");
  if (r == 2.0) return l2_norm(g);
  const int k = g.k();
  DenseKernel dk = materialize(g);
  double w = 1.0;
  for (int j = 0; j < 2 * k; ++j) w *= g.grid().cell_volume();
  double s = 0;
  for (const cplx& z : dk.a) s += std::pow(std::abs(z), r);
  return std::pow(w * s, 1.0 / r);
}

struct NormReport {
  double xi = 0;
  double param = 0;              // alpha for H-alpha reports, r for L^r ones
  std::vector<double> values;    // a_k per level, k = 1..K
  std::vector<double> weighted;  // xi^k a_k
  double total = 0;              // sum of weighted entries
  std::vector<double> ratios;    // a_{k+1} / a_k where defined
  double est_growth = 0;  // geometric mean of the trailing ceil(K/2) ratios
  double est_radius = 0;  // 1 / est_growth
  bool diverging = false;  // some xi * ratio >= 1: xi beyond the radius

  std::string to_json() const {
    auto arr = [](const std::vector<double>& v) {
      std::string s = "[";
      for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + format_double(v[i]);
      return s + "]";
    };
    std::string s = "{\"xi\":" + format_double(xi) +
                    ",\"param\":" + format_double(param) +
                    ",\"values\":" + arr(values) +
                    ",\"weighted\":" + arr(weighted) +
                    ",\"total\":" + format_double(total) +
                    ",\"ratios\":" + arr(ratios) +
                    ",\"est_growth\":" + format_double(est_growth) +
                    ",\"est_radius\":" + format_double(est_radius) +
                    ",\"diverging\":";
    s += diverging ? "true" : "false";
    return s + "}";
  }
};

namespace detail {

// Shared tail analysis: weighted sums, ratio table, growth estimate.
inline NormReport make_norm_report(std::vector<double> values, double xi,
                                   double param) {
  NormReport rep;
  rep.xi = xi;
  rep.param = param;
  rep.values = std::move(values);
  double w = 1.0;
  for (double a : rep.values) {
    w *= xi;
    rep.weighted.push_back(w * a);
    rep.total += w * a;
  }
  const int K = int(rep.values.size());
  for (int k = 0; k + 1 < K; ++k) {
    if (rep.values[k] <= 0) continue;
    double r = rep.values[k + 1] / rep.values[k];
    rep.ratios.push_back(r);
    if (xi * r >= 1.0) rep.diverging = true;
  }
  const int tail = std::min<int>(int(rep.ratios.size()), (K + 1) / 2);
  if (tail > 0) {
    double logsum = 0;
    bool ok = true;
    for (int i = 0; i < tail; ++i) {
      double r = rep.ratios[rep.ratios.size() - tail + i];
      if (r <= 0) {
        ok = false;
        break;
      }
      logsum += std::log(r);
    }
    if (ok) {
      rep.est_growth = std::exp(logsum / tail);
      rep.est_radius = rep.est_growth > 0 ? 1.0 / rep.est_growth : 0.0;
    }
  }
  return rep;
}

}  // namespace detail

// Sum over levels of xi^k || S gamma^(k) || for an arbitrary level sequence;
// entry i is weighted by xi^(i+1), the kernel orders are not constrained.
inline NormReport sequence_h_norm(const std::vector<DensityMatrix>& levels,
                                  double xi, double alpha) {
  if (!(xi > 0) || !(xi < 1))
    throw argument_error("hierarchy norms need 0 < xi < 1");
  std::vector<double> vals;
  vals.reserve(levels.size());
  for (const DensityMatrix& g : levels) vals.push_back(h_alpha_norm(g, alpha));
  return detail::make_norm_report(std::move(vals), xi, alpha);
}

inline NormReport hierarchy_norm(const HierarchyState& st, double xi,
                                 double alpha) {
  return sequence_h_norm(st.levels, xi, alpha);
}

inline NormReport lr_hierarchy_norm(const HierarchyState& st, double xi,
                                    double r) {
  if (!(xi > 0) || !(xi < 1))
    throw argument_error("hierarchy norms need 0 < xi < 1");
  std::vector<double> vals;
  vals.reserve(st.levels.size());
  for (const DensityMatrix& g : st.levels) vals.push_back(lr_norm(g, r));
  return detail::make_norm_report(std::move(vals), xi, r);
}

// Per-particle functional: the growth rate of a_k, i.e. the reciprocal of
// sup{ xi : sum xi^k a_k < infinity }. Estimated as the geometric mean of the
// trailing ceil(K/2) level-to-level ratios; exact for factorized states.
enum class AvKind { h_alpha, l_r };

inline double estimate_av(const HierarchyState& st, AvKind kind, double param) {
  if (st.K() < 3)
    throw argument_error("per-particle estimate needs at least 3 levels");
  std::vector<double> vals;
  for (const DensityMatrix& g : st.levels)
    vals.push_back(kind == AvKind::h_alpha ? h_alpha_norm(g, param)
                                           : lr_norm(g, param));
  NormReport rep = detail::make_norm_report(std::move(vals), 0.5, param);
  if (rep.ratios.empty()) return 0.0;
  return rep.est_growth;
}

// Trapezoid-in-time L1 norm of a sampled trajectory of B-hat sequences.
struct BhatSample {
  double t = 0;
  std::vector<DensityMatrix> entries;
};

inline double strichartz_l1_norm(const std::vector<BhatSample>& samples,
                                 double xi, double alpha) {
  if (samples.size() < 2)
    throw argument_error("time integration needs at least 2 samples");
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (!(samples[i].t > samples[i - 1].t))
      throw argument_error("time samples must be strictly increasing");
  std::vector<double> f;
  f.reserve(samples.size());
  for (const BhatSample& s : samples)
    f.push_back(sequence_h_norm(s.entries, xi, alpha).total);
  double acc = 0;
  for (std::size_t i = 1; i < samples.size(); ++i)
    acc += 0.5 * (samples[i].t - samples[i - 1].t) * (f[i] + f[i - 1]);
  return acc;
}

// Membership in the admissible regularity set: d = 1 needs alpha > 1/2, the
// endpoint case (d,p) = (3,2) is closed at alpha = 1, every other dimension
// is open above d/2 - 1/(2(p-1)).
inline bool alpha_set_check(int d, int p, double alpha) {
  if (d < 1) throw argument_error("dimension must be positive");
  if (p != 2 && p != 4) throw argument_error("p must be 2 or 4");
  if (d == 1) return alpha > 0.5;
  if (d == 3 && p == 2) return alpha >= 1.0;
  return alpha > 0.5 * d - 0.5 / (p - 1);
}

// Tr S^(k,1) gamma: the kinetic-energy style a-priori monitor. Hermiticity is
// required because the trace of S gamma is only guaranteed real for hermitian
// kernels.
inline double trace_energy_bound(const DensityMatrix& g) {
  if (hermiticity_defect(g) > 1e-8)
    throw state_error("energy monitor needs a hermitian kernel");
  cplx tr = trace(s_apply(g, 1.0));
  return std::real(tr);
}

}  // namespace gph
