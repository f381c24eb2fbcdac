#pragma once

// Periodic grid on the torus [-L/2, L/2)^d with n points per axis.
// Coordinates are x_i = i*h - L/2 and the Fourier frequencies are
// omega_m = 2*pi*m/L with integer m in [-n/2, n/2) (Nyquist stored as -n/2).

#include <cstdint>
#include <vector>

#include "common.hpp"

namespace gph {

struct GridSpec {
  int d = 1;      // spatial dimension per particle slot
  int n = 0;      // points per axis, even and >= 4
  double L = 0;   // box side length

  void validate() const {
    if (d < 1 || d > 3) throw argument_error("grid dimension must be 1, 2, or 3");
    if (n < 4 || n % 2 != 0) throw argument_error("grid must have even n >= 4");
    if (!(L > 0)) throw argument_error("grid length must be positive");
  }

  double h() const { return L / n; }

  // Points in one particle slot (n^d) as a 64-bit count.
  std::uint64_t slot_points() const {
    std::uint64_t p = 1;
    for (int i = 0; i < d; ++i) p *= std::uint64_t(n);
    return p;
  }

  // Cell volume h^d for one slot.
  double cell_volume() const {
    double v = 1.0;
    for (int i = 0; i < d; ++i) v *= h();
    return v;
  }

  // Signed integer frequency of axis index i.
  int freq_index(int i) const { return i < n / 2 ? i : i - n; }

  double omega(int m) const { return 2.0 * PI * m / L; }

  double coord(int i) const { return i * h() - L / 2.0; }

  bool operator==(const GridSpec& o) const {
    return d == o.d && n == o.n && L == o.L;
  }
};

// Japanese-bracket weight (1 + |omega_m|^2)^(alpha/2) for a single axis
// frequency index m. Multi-axis slots combine |omega|^2 across axes before
// applying the power, so this scalar form is the d=1 building block.
inline double bracket_weight(const GridSpec& g, double alpha, int m) {
  double w = g.omega(m);
  return std::pow(1.0 + w * w, alpha / 2.0);
}

// |omega|^2 of the d-dimensional frequency vector addressed by a flat
// slot index (row-major over axes).
inline double slot_omega_sq(const GridSpec& g, std::uint64_t flat) {
  double s = 0.0;
  for (int a = g.d - 1; a >= 0; --a) {
    int i = int(flat % g.n);
    flat /= g.n;
    double w = g.omega(g.freq_index(i));
    s += w * w;
  }
  return s;
}

// Per-slot tables used by diagonal Fourier multipliers.
inline std::vector<double> slot_bracket_table(const GridSpec& g, double alpha) {
  std::vector<double> t(g.slot_points());
  for (std::uint64_t i = 0; i < t.size(); ++i)
    t[i] = std::pow(1.0 + slot_omega_sq(g, i), alpha / 2.0);
  return t;
}

inline std::vector<cplx> slot_free_phase_table(const GridSpec& g, double t) {
  std::vector<cplx> tab(g.slot_points());
  for (std::uint64_t i = 0; i < tab.size(); ++i) {
    double w2 = slot_omega_sq(g, i);
    tab[i] = std::exp(cplx(0.0, -t * w2));
  }
  return tab;
}

}  // namespace gph
