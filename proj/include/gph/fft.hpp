#pragma once

// Unitary FFT. Power-of-two lengths run the iterative radix-2 kernel;
// any other even length goes through Bluestein's chirp-z reduction to a
// power-of-two convolution. Plans are cached per length.
//
// Convention: forward transform is
//   F[m] = n^{-1/2} sum_j f[j] exp(-2*pi*i*j*m/n)
// and the inverse flips the sign, so both directions are unitary and
// round-trip to machine precision.

#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "common.hpp"
#include "grid.hpp"

namespace gph {
namespace detail {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place radix-2, no normalization. sign=-1 forward, +1 inverse.
inline void fft_pow2(cplx* a, int n, int sign) {
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    double ang = sign * 2.0 * PI / len;
    cplx wl = std::exp(cplx(0.0, ang));
    for (int i = 0; i < n; i += len) {
      cplx w = 1.0;
      for (int j = 0; j < len / 2; ++j) {
        cplx u = a[i + j];
        cplx v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

struct bluestein_plan {
  int n = 0;
  int m = 0;                  // convolution length, power of two >= 2n-1
  std::vector<cplx> chirp;    // exp(-i*pi*j^2/n), j in [0,n)
  std::vector<cplx> bhat;     // forward pow2 FFT of the padded chirp conjugate
};

inline std::shared_ptr<const bluestein_plan> bluestein_for(int n) {
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const bluestein_plan>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto plan = std::make_shared<bluestein_plan>();
  plan->n = n;
  plan->m = next_pow2(2 * n - 1);
  plan->chirp.resize(n);
  for (int j = 0; j < n; ++j) {
    // j^2 mod 2n keeps the argument small for large n.
    long long jj = (long long)j * j % (2ll * n);
    plan->chirp[j] = std::exp(cplx(0.0, -PI * double(jj) / n));
  }
  std::vector<cplx> b(plan->m, cplx(0.0, 0.0));
  b[0] = std::conj(plan->chirp[0]);
  for (int j = 1; j < n; ++j) {
    b[j] = std::conj(plan->chirp[j]);
    b[plan->m - j] = std::conj(plan->chirp[j]);
  }
  fft_pow2(b.data(), plan->m, -1);
  plan->bhat = std::move(b);
  cache[n] = plan;
  return plan;
}

// In-place arbitrary-n DFT via Bluestein, no normalization.
inline void fft_bluestein(cplx* a, int n, int sign) {
  auto plan = bluestein_for(n);
  const int m = plan->m;
  std::vector<cplx> x(m, cplx(0.0, 0.0));
  if (sign < 0) {
    for (int j = 0; j < n; ++j) x[j] = a[j] * plan->chirp[j];
  } else {
    for (int j = 0; j < n; ++j) x[j] = a[j] * std::conj(plan->chirp[j]);
  }
  fft_pow2(x.data(), m, -1);
  if (sign < 0) {
    for (int j = 0; j < m; ++j) x[j] *= plan->bhat[j];
  } else {
    for (int j = 0; j < m; ++j) x[j] *= std::conj(plan->bhat[j]);
  }
  fft_pow2(x.data(), m, +1);
  double scale = 1.0 / m;
  if (sign < 0) {
    for (int j = 0; j < n; ++j) a[j] = x[j] * plan->chirp[j] * scale;
  } else {
    for (int j = 0; j < n; ++j) a[j] = x[j] * std::conj(plan->chirp[j]) * scale;
  }
}

}  // namespace detail

// Unitary in-place transform of a contiguous length-n line.
inline void fft_line(cplx* a, int n, bool inverse) {
  int sign = inverse ? +1 : -1;
  if (detail::is_pow2(n)) {
    detail::fft_pow2(a, n, sign);
  } else {
    detail::fft_bluestein(a, n, sign);
  }
  double s = 1.0 / std::sqrt(double(n));
  for (int i = 0; i < n; ++i) a[i] *= s;
}

// Transform every length-n line along one axis of a flat array.
// total = array length, stride = distance between consecutive elements of a
// line. Lines are gathered into a scratch buffer, transformed, and scattered
// back, which keeps the kernel simple for any axis ordering.
inline void fft_axis(cplx* data, std::uint64_t total, int n, std::uint64_t stride,
                     bool inverse) {
  if (total % (std::uint64_t(n) * stride) != 0)
    throw shape_error("fft_axis: axis does not tile the array");
  std::vector<cplx> line(n);
  const std::uint64_t block = std::uint64_t(n) * stride;
  for (std::uint64_t base = 0; base < total; base += block) {
    for (std::uint64_t off = 0; off < stride; ++off) {
      cplx* line0 = data + base + off;
      for (int i = 0; i < n; ++i) line[i] = line0[std::uint64_t(i) * stride];
      fft_line(line.data(), n, inverse);
      for (int i = 0; i < n; ++i) line0[std::uint64_t(i) * stride] = line[i];
    }
  }
}

// Full d-dimensional unitary transform of one particle slot stored
// row-major as n^d contiguous values.
inline void fft_slot(cplx* data, const GridSpec& g, bool inverse) {
  std::uint64_t total = g.slot_points();
  std::uint64_t stride = 1;
  for (int axis = g.d - 1; axis >= 0; --axis) {
    fft_axis(data, total, g.n, stride, inverse);
    stride *= std::uint64_t(g.n);
  }
}

}  // namespace gph
