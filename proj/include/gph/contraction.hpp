#pragma once

// Hierarchy contraction operators.
//
// For coupling order p (cubic p=2, quintic p=4) the operator B_{j;k+1..k+p/2}
// maps a (k+p/2)-particle kernel to a k-particle kernel by evaluating the
// p/2 extra slot pairs on the diagonal at x_j (first piece) and x'_j (second
// piece, with a minus sign):
//
//   (B_j gamma)(x_1..x_k; x'_1..x'_k)
//     = gamma(x_1..x_k, x_j,..; x'_1..x'_k, x_j,..)
//     - gamma(x_1..x_k, x'_j,..; x'_1..x'_k, x'_j,..)
//
// Grid deltas are pure index evaluations; no h factors appear. On separable
// kernels each piece multiplies a single retained factor by the pointwise
// product of the contracted extra-slot factors, so one input term becomes
// exactly two output terms.

#include <string>

#include "common.hpp"
#include "density.hpp"

namespace gph {

struct ModelParams {
  int p = 2;        // nonlinearity order: 2 (cubic) or 4 (quintic)
  double mu = 1.0;  // +1 defocusing, -1 focusing

  void validate() const {
    if (p != 2 && p != 4) throw argument_error("model p must be 2 or 4");
    if (mu != 1.0 && mu != -1.0) throw argument_error("model mu must be +1 or -1");
  }

  int extras() const { return p / 2; }
};

// B_{j; k+1..k+p/2} on a (k + p/2)-particle kernel; j is 1-based.
inline DensityMatrix apply_B_single(const DensityMatrix& g, int j,
                                    const ModelParams& model) {
  model.validate();
  const int q = model.extras();
  const int kin = g.k();
  const int k = kin - q;
  if (k < 1)
    throw shape_error("apply_B_single: kernel level " + std::to_string(kin) +
                      " too small for p=" + std::to_string(model.p));
  if (j < 1 || j > k)
    throw argument_error("apply_B_single: slot j out of range");
  const int jj = j - 1;

  if (!g.is_dense()) {
    const SeparableKernel& in = g.sep();
    SeparableKernel out = sep_zero(in.grid, k);
    out.terms.reserve(2 * in.terms.size());
    const std::uint64_t N = in.grid.slot_points();
    for (const SepTerm& t : in.terms) {
      // Pointwise product of the contracted extra-slot pairs.
      std::vector<cplx> diag(N, cplx(1, 0));
      for (int e = k; e < kin; ++e)
        for (std::uint64_t x = 0; x < N; ++x)
          diag[x] *= t.ket[e][x] * std::conj(t.bra[e][x]);

      SepTerm plus;
      plus.c = t.c;
      plus.ket.assign(t.ket.begin(), t.ket.begin() + k);
      plus.bra.assign(t.bra.begin(), t.bra.begin() + k);
      for (std::uint64_t x = 0; x < N; ++x) plus.ket[jj][x] *= diag[x];
      out.terms.push_back(std::move(plus));

      SepTerm minus;
      minus.c = -t.c;
      minus.ket.assign(t.ket.begin(), t.ket.begin() + k);
      minus.bra.assign(t.bra.begin(), t.bra.begin() + k);
      // Stored bra enters the kernel conjugated, so the x'_j-diagonal factor
      // appears as the conjugate of the stored product.
      for (std::uint64_t x = 0; x < N; ++x) minus.bra[jj][x] *= std::conj(diag[x]);
      out.terms.push_back(std::move(minus));
    }
    return DensityMatrix(std::move(out));
  }

  const DenseKernel& in = g.dense();
  DenseKernel out = dense_zero(in.grid, k);
  const std::uint64_t N = in.slot_points();
  std::vector<std::uint64_t> idx(2 * k, 0);
  for (std::uint64_t flat = 0; flat < out.a.size(); ++flat) {
    std::uint64_t rem = flat;
    for (int s = 2 * k - 1; s >= 0; --s) {
      idx[s] = rem % N;
      rem /= N;
    }
    const std::uint64_t xj = idx[jj];
    const std::uint64_t xpj = idx[k + jj];
    // Input layout: x_1..x_k, extras, x'_1..x'_k, extras.
    std::uint64_t in_plus = 0, in_minus = 0;
    for (int s = 0; s < k; ++s) {
      in_plus = in_plus * N + idx[s];
      in_minus = in_minus * N + idx[s];
    }
    for (int e = 0; e < q; ++e) {
      in_plus = in_plus * N + xj;
      in_minus = in_minus * N + xpj;
    }
    for (int s = 0; s < k; ++s) {
      in_plus = in_plus * N + idx[k + s];
      in_minus = in_minus * N + idx[k + s];
    }
    for (int e = 0; e < q; ++e) {
      in_plus = in_plus * N + xj;
      in_minus = in_minus * N + xpj;
    }
    out.a[flat] = in.a[in_plus] - in.a[in_minus];
  }
  return DensityMatrix(std::move(out));
}

// B_{k+p/2} = sum_{j=1..k} B_{j;k+1..k+p/2}.
inline DensityMatrix apply_B_full(const DensityMatrix& g, const ModelParams& model) {
  model.validate();
  const int k = g.k() - model.extras();
  if (k < 1) throw shape_error("apply_B_full: kernel level too small");
  DensityMatrix acc = apply_B_single(g, 1, model);
  for (int j = 2; j <= k; ++j) {
    DensityMatrix piece = apply_B_single(g, j, model);
    add_scaled(acc, piece, cplx(1, 0));
  }
  return acc;
}

}  // namespace gph
