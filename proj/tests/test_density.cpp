#include <catch2/catch_amalgamated.hpp>

#include "gph/contraction.hpp"
#include "gph/density.hpp"

using namespace gph;

namespace {

WaveFunction gaussian(const GridSpec& g, double width, double amp) {
  return wf_from_function(g, [&](const std::vector<double>& x) {
    double r2 = 0;
    for (double xi : x) r2 += xi * xi;
    return cplx(amp * std::exp(-r2 / (2.0 * width * width)), 0.0);
  });
}

WaveFunction random_wf(const GridSpec& g, std::uint64_t seed) {
  rng64 rng(seed);
  WaveFunction w = wf_zero(g);
  for (auto& z : w.v) z = rng.cnormal();
  return w;
}

SeparableKernel random_sep(const GridSpec& g, int k, int terms, std::uint64_t seed) {
  rng64 rng(seed);
  SeparableKernel s = sep_zero(g, k);
  for (int m = 0; m < terms; ++m) {
    SepTerm t;
    t.c = rng.cnormal();
    t.ket.resize(k);
    t.bra.resize(k);
    for (int j = 0; j < k; ++j) {
      t.ket[j].resize(g.slot_points());
      t.bra[j].resize(g.slot_points());
      for (auto& z : t.ket[j]) z = rng.cnormal();
      for (auto& z : t.bra[j]) z = rng.cnormal();
    }
    s.terms.push_back(std::move(t));
  }
  return s;
}

}  // namespace

TEST_CASE("factorized state: dense and separable agree pointwise") {
  GridSpec g{1, 6, 3.0};
  WaveFunction phi = random_wf(g, 7);
  DensityMatrix dd = from_factorized(phi, 2, Repr::dense);
  DensityMatrix ss = from_factorized(phi, 2, Repr::separable);
  rng64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint64_t> idx(4);
    for (auto& i : idx) i = rng.next_u64() % 6;
    CHECK(std::abs(value_at(dd, idx) - value_at(ss, idx)) < 1e-13);
  }
}

TEST_CASE("trace of a factorized state is the L2 norm to the 2k") {
  GridSpec g{1, 16, 8.0};
  WaveFunction phi = gaussian(g, 1.0, 0.8);
  double n2 = wf_l2_norm(phi) * wf_l2_norm(phi);
  for (int k : {1, 2, 3}) {
    DensityMatrix s = from_factorized(phi, k, Repr::separable);
    CHECK(std::abs(trace(s) - std::pow(n2, k)) < 1e-12 * std::pow(n2, k));
  }
  DensityMatrix d = from_factorized(phi, 2, Repr::dense);
  CHECK(std::real(trace(d)) == Catch::Approx(n2 * n2).epsilon(1e-12));
}

TEST_CASE("partial trace of factorized state scales by traced mass") {
  GridSpec g{1, 12, 6.0};
  WaveFunction phi = random_wf(g, 11);
  double n2 = wf_l2_norm(phi) * wf_l2_norm(phi);
  DensityMatrix s3 = from_factorized(phi, 3, Repr::separable);
  DensityMatrix s1 = partial_trace(s3, 2);
  REQUIRE(s1.k() == 1);
  DensityMatrix want = from_factorized(phi, 1, Repr::separable);
  scale(want, cplx(n2 * n2, 0));
  CHECK(rel_l2_distance(s1, want) < 1e-12);
  // Trace is preserved through partial tracing.
  CHECK(std::abs(trace(s1) - trace(s3)) < 1e-10 * std::abs(trace(s3)));
}

TEST_CASE("partial trace on dense kernels matches a direct contraction") {
  GridSpec g{1, 4, 2.0};
  SeparableKernel s = random_sep(g, 2, 3, 21);
  DenseKernel dk = materialize(s);
  DensityMatrix traced = partial_trace(DensityMatrix(dk), 1);
  const std::uint64_t N = 4;
  const double h = g.h();
  for (std::uint64_t y = 0; y < N; ++y)
    for (std::uint64_t yp = 0; yp < N; ++yp) {
      cplx want(0, 0);
      for (std::uint64_t z = 0; z < N; ++z)
        want += dk.a[((y * N + z) * N + yp) * N + z];
      want *= h;
      CHECK(std::abs(value_at(traced, {y, yp}) - want) < 1e-12);
    }
  // And the separable route agrees with the dense route.
  DensityMatrix traced_sep = partial_trace(DensityMatrix(s), 1);
  CHECK(rel_l2_distance(traced, traced_sep) < 1e-12);
}

TEST_CASE("inner products agree between representations") {
  GridSpec g{1, 6, 3.0};
  SeparableKernel a = random_sep(g, 2, 3, 31);
  SeparableKernel b = random_sep(g, 2, 2, 32);
  cplx sep_val = inner_l2(DensityMatrix(a), DensityMatrix(b));
  cplx dense_val = inner_l2(DensityMatrix(materialize(a)), DensityMatrix(materialize(b)));
  CHECK(std::abs(sep_val - dense_val) < 1e-10 * (1.0 + std::abs(dense_val)));
}

TEST_CASE("hermiticity defect: zero for factorized, positive for generic") {
  GridSpec g{1, 8, 4.0};
  WaveFunction phi = random_wf(g, 41);
  CHECK(hermiticity_defect(from_factorized(phi, 2, Repr::separable)) < 1e-13);
  SeparableKernel s = random_sep(g, 1, 2, 42);
  CHECK(hermiticity_defect(DensityMatrix(s)) > 0.1);
  // gamma + gamma^dagger is hermitian.
  DensityMatrix sym(s);
  add_scaled(sym, adjoint(DensityMatrix(s)), cplx(1, 0));
  CHECK(hermiticity_defect(sym) < 1e-13);
}

TEST_CASE("free propagation of kernels: both routes, invariants") {
  GridSpec g{1, 8, 4.0};
  SeparableKernel s = random_sep(g, 2, 2, 51);
  DensityMatrix sep(s);
  DensityMatrix den(materialize(s));
  double t = 0.37;
  DensityMatrix sep_t = free_propagate(sep, t);
  DensityMatrix den_t = free_propagate(den, t);
  CHECK(rel_l2_distance(DensityMatrix(materialize(sep_t)), den_t) < 1e-11);
  // Trace and L2 norm are conserved; hermiticity is preserved.
  CHECK(std::abs(trace(sep_t) - trace(sep)) < 1e-11 * (1 + std::abs(trace(sep))));
  CHECK(l2_norm(sep_t) == Catch::Approx(l2_norm(sep)).epsilon(1e-11));
  WaveFunction phi = random_wf(g, 52);
  DensityMatrix fact = from_factorized(phi, 2, Repr::separable);
  CHECK(hermiticity_defect(free_propagate(fact, 0.9)) < 1e-12);
  // t=0 is the identity.
  CHECK(rel_l2_distance(free_propagate(sep, 0.0), sep) < 1e-13);
}

TEST_CASE("free propagation of a factorized state tracks the one-body flow") {
  GridSpec g{1, 16, 8.0};
  WaveFunction phi = gaussian(g, 1.0, 1.0);
  double t = 0.21;
  DensityMatrix moved = free_propagate(from_factorized(phi, 2, Repr::separable), t);
  DensityMatrix want = from_factorized(wf_free_propagate(phi, t), 2, Repr::separable);
  CHECK(rel_l2_distance(moved, want) < 1e-12);
}

TEST_CASE("bracket multiplier: dense route matches separable route") {
  GridSpec g{1, 8, 4.0};
  SeparableKernel s = random_sep(g, 2, 2, 61);
  double alpha = 0.8;
  DensityMatrix a = s_apply(DensityMatrix(s), alpha);
  DensityMatrix b = s_apply(DensityMatrix(materialize(s)), alpha);
  CHECK(rel_l2_distance(DensityMatrix(materialize(a)), b) < 1e-11);
  // alpha = 0 is the identity.
  CHECK(rel_l2_distance(s_apply(DensityMatrix(s), 0.0), DensityMatrix(s)) == 0.0);
}

TEST_CASE("apply_multiplier requires dense input and honors the profile") {
  GridSpec g{1, 8, 4.0};
  SeparableKernel s = random_sep(g, 1, 2, 71);
  MultiplierProfile prof;
  prof.kind = MultiplierKind::bracket;
  prof.alpha = 1.0;
  prof.grid = g;
  CHECK_THROWS_AS(apply_multiplier(DensityMatrix(s), prof), state_error);
  DensityMatrix d(materialize(s));
  DensityMatrix viaProfile = apply_multiplier(d, prof);
  DensityMatrix direct = s_apply(d, 1.0);
  CHECK(rel_l2_distance(viaProfile, direct) < 1e-13);
  MultiplierProfile freep;
  freep.kind = MultiplierKind::free_phase;
  freep.t = 0.4;
  freep.grid = g;
  CHECK(rel_l2_distance(apply_multiplier(d, freep), free_propagate(d, 0.4)) < 1e-13);
}

TEST_CASE("bosonic symmetrization is an averaging projection") {
  GridSpec g{1, 4, 2.0};
  SeparableKernel s = random_sep(g, 2, 2, 81);
  DensityMatrix d(materialize(s));
  DensityMatrix sym = bosonic_symmetrize(d);
  // Idempotent.
  CHECK(rel_l2_distance(bosonic_symmetrize(sym), sym) < 1e-12);
  // Output has no symmetry defect; generic input does.
  CHECK(bosonic_symmetry_defect(sym) < 1e-12);
  CHECK(bosonic_symmetry_defect(d) > 0.1);
  // Direct oracle: average over the four (pi, sigma) pairs at a spot index.
  const std::uint64_t N = 4;
  std::vector<std::uint64_t> idx{1, 3, 0, 2};
  const DenseKernel& dk = d.dense();
  auto at = [&](std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t e) {
    return dk.a[((a * N + b) * N + c) * N + e];
  };
  cplx want = 0.25 * (at(1, 3, 0, 2) + at(3, 1, 0, 2) + at(1, 3, 2, 0) + at(3, 1, 2, 0));
  CHECK(std::abs(value_at(sym, idx) - want) < 1e-13);
  // Factorized states are already symmetric.
  WaveFunction phi = random_wf(g, 82);
  DensityMatrix fact = from_factorized(phi, 3, Repr::dense);
  CHECK(rel_l2_distance(bosonic_symmetrize(fact), fact) < 1e-12);
}

TEST_CASE("dense capacity is gated by the memory budget") {
  GridSpec g{1, 64, 16.0};
  CHECK_THROWS_AS(dense_zero(g, 5), capacity_error);
  CHECK_NOTHROW(dense_zero(g, 2));
  // Overflow-safe byte accounting for absurd ranks.
  CHECK(dense_bytes(64, 64) == UINT64_MAX);
}

TEST_CASE("adjoint matches conjugate transpose on dense kernels") {
  GridSpec g{1, 4, 2.0};
  SeparableKernel s = random_sep(g, 1, 2, 91);
  DensityMatrix d(materialize(s));
  DensityMatrix adj = adjoint(d);
  const std::uint64_t N = 4;
  for (std::uint64_t a = 0; a < N; ++a)
    for (std::uint64_t b = 0; b < N; ++b)
      CHECK(std::abs(value_at(adj, {a, b}) - std::conj(value_at(d, {b, a}))) < 1e-13);
}
