#pragma once

// One-body nonlinear Schroedinger reference solver.
//
//   i dphi/dt = -Laplacian phi + mu |phi|^p phi
//
// Strang splitting: half a kinetic step in Fourier space, a full nonlinear
// step as a pointwise phase, half a kinetic step. Both substeps are exactly
// L2-preserving, so mass is conserved to round-off regardless of dt.
//
// This solver is the independent oracle the hierarchy engine is checked
// against: it never touches kernels, contractions, or closures.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "common.hpp"
#include "density.hpp"
#include "grid.hpp"
#include "wavefunction.hpp"

namespace gph {

struct NlsTrajectory {
  int p = 2;
  int mu = 1;
  double dt = 0;
  double t0 = 0;
  std::vector<WaveFunction> states;  // states[i] at time t0 + i dt

  double time_at(std::size_t i) const { return t0 + double(i) * dt; }
};

// mu = 0 is allowed as a test hook (pure free evolution).
inline NlsTrajectory split_step(const WaveFunction& phi0, int p, int mu,
                                double dt, int steps) {
  if (p != 2 && p != 4) throw argument_error("p must be 2 or 4");
  if (mu != -1 && mu != 0 && mu != 1)
    throw argument_error("mu must be -1, 0, or +1");
  if (!(dt > 0) || steps < 0) throw argument_error("need dt > 0, steps >= 0");
  phi0.validate();
  NlsTrajectory traj;
  traj.p = p;
  traj.mu = mu;
  traj.dt = dt;
  traj.states.reserve(steps + 1);
  traj.states.push_back(phi0);
  WaveFunction cur = phi0;
  for (int s = 0; s < steps; ++s) {
    cur = wf_free_propagate(cur, 0.5 * dt);
    if (mu != 0) {
      double peak = 0;
      for (const cplx& z : cur.v) peak = std::max(peak, std::abs(z));
      double rot = dt * std::pow(peak, double(p));
      if (rot > 0.5)
        throw state_error("split-step phase rotation " + format_double(rot) +
                          " exceeds the stability guard (reduce dt)");
      for (cplx& z : cur.v) {
        double a = std::abs(z);
        double phase = -dt * double(mu) * std::pow(a, double(p));
        z *= cplx(std::cos(phase), std::sin(phase));
      }
    }
    cur = wf_free_propagate(cur, 0.5 * dt);
    traj.states.push_back(cur);
  }
  return traj;
}

// E[phi] = integral |grad phi|^2 + (2 mu / (p+2)) |phi|^(p+2); conserved by
// the exact flow, drifts at O(dt^2) under splitting.
inline double nls_energy(const WaveFunction& phi, int p, int mu) {
  WaveFunction hat = phi;
  wf_to_fourier(hat);
  double kin = 0;
  for (std::uint64_t i = 0; i < hat.v.size(); ++i)
    kin += slot_omega_sq(phi.grid, i) * std::norm(hat.v[i]);
  kin *= phi.grid.cell_volume();
  double pot = 0;
  for (const cplx& z : phi.v) pot += std::pow(std::abs(z), double(p) + 2.0);
  pot *= phi.grid.cell_volume() * 2.0 * double(mu) / (double(p) + 2.0);
  return kin + pot;
}

// ---------------------------------------------------------------------------
// Quintic one-dimensional ground state: Q'' - Q + Q^5 = 0, positive, even,
// decaying. Shooting on the half line brackets Q(0); a spectral Newton
// iteration on the periodic grid then drives the discrete residual to
// round-off. The closed form is used by the tests as an oracle, never here.
// ---------------------------------------------------------------------------

namespace detail {

// RK4 on (Q, Q') with Q'' = Q - Q^5, from Q(0) = a, Q'(0) = 0. Returns +1 if
// the solution turns upward (a too small), -1 if it crosses zero (a too
// large), 0 if it survives to x_end straddling the decaying manifold.
inline int shoot_classify(double a, double x_end, double h,
                          std::vector<double>* samples = nullptr,
                          double sample_dx = 0) {
  double q = a, v = 0, x = 0;
  auto f = [](double q1) { return q1 - q1 * q1 * q1 * q1 * q1; };
  std::size_t next_sample = 0;
  while (x < x_end) {
    if (samples && sample_dx > 0) {
      while (next_sample * sample_dx <= x + 1e-12) {
        samples->push_back(q);
        ++next_sample;
      }
    }
    double k1q = v, k1v = f(q);
    double k2q = v + 0.5 * h * k1v, k2v = f(q + 0.5 * h * k1q);
    double k3q = v + 0.5 * h * k2v, k3v = f(q + 0.5 * h * k2q);
    double k4q = v + h * k3v, k4v = f(q + h * k3q);
    q += h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q);
    v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
    x += h;
    if (q <= 0) return -1;
    if (v > 0) return +1;
  }
  return 0;
}

}  // namespace detail

inline WaveFunction ground_state_quintic_1d(const GridSpec& grid) {
  grid.validate();
  if (grid.d != 1)
    throw argument_error("quintic ground state generator is one-dimensional");
  if (grid.L < 16)
    throw argument_error("ground state needs L >= 16 for tail decay");
  const int n = grid.n;
  const double h = grid.h();

  // Bracket the decaying initial height by bisection on the shot outcome.
  double lo = 1.05, hi = 2.0;
  if (detail::shoot_classify(lo, 14.0, 1e-3) != 1 ||
      detail::shoot_classify(hi, 14.0, 1e-3) != -1)
    throw numeric_error("ground state shooting failed to bracket");
  for (int it = 0; it < 90; ++it) {
    double mid = 0.5 * (lo + hi);
    int cls = detail::shoot_classify(mid, 14.0, 1e-3);
    if (cls == 1)
      lo = mid;
    else if (cls == -1)
      hi = mid;
    else {
      lo = hi = mid;
      break;
    }
  }
  const double a0 = 0.5 * (lo + hi);

  // Sample the shot on the half line at the grid spacing, stopping where the
  // unstable tail takes over, then continue with exponential decay.
  std::vector<double> half;
  detail::shoot_classify(a0, grid.L / 2 + h, h, &half, h);
  std::size_t cut = half.size();
  for (std::size_t i = 1; i < half.size(); ++i) {
    if (half[i] <= 1e-8 || half[i] > half[i - 1]) {
      cut = i;
      break;
    }
  }
  const std::uint64_t half_pts = n / 2 + 1;
  std::vector<double> seed(half_pts, 0.0);
  for (std::uint64_t i = 0; i < half_pts; ++i) {
    if (i < cut && i < half.size())
      seed[i] = half[i];
    else if (cut > 0)
      seed[i] = half[cut - 1] * std::exp(-double(i - (cut - 1)) * h);
  }

  // Even periodic extension around the grid point at x = 0 (index n/2).
  Eigen::VectorXd q(n);
  for (int i = 0; i < n; ++i) {
    int off = std::abs(i - n / 2);
    off = std::min<int>(off, int(half_pts - 1));
    q(i) = seed[off];
  }

  // Spectral Newton on F(Q) = D2 Q - Q + Q^5 with D2 the Fourier Laplacian.
  Eigen::MatrixXd D2(n, n);
  {
    std::vector<cplx> col(n);
    for (int j = 0; j < n; ++j) {
      std::fill(col.begin(), col.end(), cplx(0, 0));
      col[j] = cplx(1, 0);
      fft_slot(col.data(), grid, false);
      for (int i = 0; i < n; ++i) col[i] *= -slot_omega_sq(grid, i);
      fft_slot(col.data(), grid, true);
      for (int i = 0; i < n; ++i) D2(i, j) = std::real(col[i]);
    }
  }
  auto residual = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
    Eigen::VectorXd r = D2 * u - u;
    for (int i = 0; i < n; ++i) r(i) += std::pow(u(i), 5.0);
    return r;
  };
  double rnorm = 0;
  for (int newton = 0; newton < 40; ++newton) {
    Eigen::VectorXd r = residual(q);
    rnorm = std::sqrt(h * r.squaredNorm());
    if (rnorm < 1e-12) break;
    Eigen::MatrixXd J = D2;
    for (int i = 0; i < n; ++i) {
      J(i, i) += -1.0 + 5.0 * std::pow(q(i), 4.0);
    }
    Eigen::VectorXd dq = J.partialPivLu().solve(r);
    q -= dq;
    // Keep the even symmetry exact against round-off drift.
    for (int i = 1; i < n / 2; ++i) {
      double avg = 0.5 * (q(n / 2 + i) + q(n / 2 - i));
      q(n / 2 + i) = avg;
      q(n / 2 - i) = avg;
    }
  }
  if (!(rnorm < 1e-10))
    throw numeric_error("ground state Newton stalled at residual " +
                        format_double(rnorm));
  WaveFunction out = wf_zero(grid);
  for (int i = 0; i < n; ++i) out.v[i] = cplx(q(i), 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Factorized embedding of a one-body trajectory.
// ---------------------------------------------------------------------------

struct FactorizedTrajectory {
  int k = 1;
  std::vector<double> times;
  std::vector<DensityMatrix> gammas;
};

inline FactorizedTrajectory factorized_trajectory(const NlsTrajectory& traj,
                                                  int k, int stride = 1) {
  if (k < 1) throw argument_error("k must be positive");
  if (stride < 1) throw argument_error("stride must be positive");
  if (traj.states.empty()) throw argument_error("empty trajectory");
  const GridSpec& g = traj.states.front().grid;
  FactorizedTrajectory out;
  out.k = k;
  for (std::size_t i = 0; i < traj.states.size(); i += stride) {
    if (!(traj.states[i].grid == g))
      throw shape_error("trajectory states use different grids");
    out.times.push_back(traj.time_at(i));
    out.gammas.push_back(from_factorized(traj.states[i], k, Repr::separable));
  }
  return out;
}

}  // namespace gph
