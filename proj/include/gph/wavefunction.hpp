#pragma once

// One-body complex fields on a GridSpec, plus the handful of one-body
// spectral operations everything else is built from.

#include <functional>
#include <vector>

#include "common.hpp"
#include "fft.hpp"
#include "grid.hpp"

namespace gph {

struct WaveFunction {
  GridSpec grid;
  std::vector<cplx> v;  // n^d values, row-major over axes

  void validate() const {
    grid.validate();
    if (v.size() != grid.slot_points())
      throw shape_error("wavefunction size does not match grid");
  }
};

inline WaveFunction wf_zero(const GridSpec& g) {
  g.validate();
  return {g, std::vector<cplx>(g.slot_points(), cplx(0, 0))};
}

// Sample f at the grid points. f receives the d coordinates.
inline WaveFunction wf_from_function(
    const GridSpec& g, const std::function<cplx(const std::vector<double>&)>& f) {
  WaveFunction w = wf_zero(g);
  std::vector<double> x(g.d);
  std::vector<int> idx(g.d, 0);
  for (std::uint64_t flat = 0; flat < w.v.size(); ++flat) {
    std::uint64_t rem = flat;
    for (int a = g.d - 1; a >= 0; --a) {
      idx[a] = int(rem % g.n);
      rem /= g.n;
    }
    for (int a = 0; a < g.d; ++a) x[a] = g.coord(idx[a]);
    w.v[flat] = f(x);
  }
  return w;
}

inline cplx wf_inner(const WaveFunction& a, const WaveFunction& b) {
  if (!(a.grid == b.grid)) throw shape_error("wavefunction grids differ");
  cplx s(0, 0);
  for (std::size_t i = 0; i < a.v.size(); ++i) s += std::conj(a.v[i]) * b.v[i];
  return s * a.grid.cell_volume();
}

inline double wf_l2_norm(const WaveFunction& a) {
  double s = 0;
  for (const cplx& z : a.v) s += std::norm(z);
  return std::sqrt(s * a.grid.cell_volume());
}

inline void wf_scale(WaveFunction& a, cplx s) {
  for (cplx& z : a.v) z *= s;
}

inline void wf_to_fourier(WaveFunction& a) { fft_slot(a.v.data(), a.grid, false); }
inline void wf_to_physical(WaveFunction& a) { fft_slot(a.v.data(), a.grid, true); }

// exp(i t Laplacian): multiply mode omega by exp(-i t |omega|^2).
inline WaveFunction wf_free_propagate(const WaveFunction& a, double t) {
  WaveFunction out = a;
  wf_to_fourier(out);
  auto phase = slot_free_phase_table(a.grid, t);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= phase[i];
  wf_to_physical(out);
  return out;
}

// <grad>^alpha = (1 - Laplacian)^(alpha/2).
inline WaveFunction wf_bracket_apply(const WaveFunction& a, double alpha) {
  WaveFunction out = a;
  wf_to_fourier(out);
  auto tab = slot_bracket_table(a.grid, alpha);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= tab[i];
  wf_to_physical(out);
  return out;
}

inline double wf_h_alpha_norm(const WaveFunction& a, double alpha) {
  WaveFunction tmp = a;
  wf_to_fourier(tmp);
  auto tab = slot_bracket_table(a.grid, alpha);
  double s = 0;
  for (std::size_t i = 0; i < tmp.v.size(); ++i)
    s += tab[i] * tab[i] * std::norm(tmp.v[i]);
  return std::sqrt(s * a.grid.cell_volume());
}

}  // namespace gph
