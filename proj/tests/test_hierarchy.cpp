#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <complex>

#include "gph/contraction.hpp"
#include "gph/density.hpp"
#include "gph/hierarchy.hpp"
#include "gph/wavefunction.hpp"

using namespace gph;

namespace {

GridSpec g1d(int n = 32, double L = 2 * M_PI) { return {1, n, L}; }

WaveFunction smooth_phi(const GridSpec& g, bool unit = true) {
  WaveFunction phi = wf_from_function(g, [&](const std::vector<double>& x) {
    double u = 2 * M_PI * x[0] / g.L;
    return cplx(std::cos(u) + 0.3, 0.4 * std::sin(2 * u)) +
           cplx(0.2, 0) * std::cos(3 * u);
  });
  if (unit) wf_scale(phi, 1.0 / wf_l2_norm(phi));
  return phi;
}

// Weighted-orthonormal plane wave exp(i m 2pi x / L) / sqrt(L^d).
WaveFunction plane(const GridSpec& g, int m) {
  WaveFunction w = wf_from_function(g, [&](const std::vector<double>& x) {
    double ph = 2 * M_PI * m * x[0] / g.L;
    return cplx(std::cos(ph), std::sin(ph));
  });
  wf_scale(w, 1.0 / wf_l2_norm(w));
  return w;
}

DensityMatrix dyad_mix(const GridSpec& g,
                       const std::vector<std::pair<double, WaveFunction>>& parts) {
  SeparableKernel s = sep_zero(g, 1);
  for (const auto& [w, f] : parts) {
    SepTerm t;
    t.c = w;
    t.ket = {f.v};
    t.bra = {f.v};
    s.terms.push_back(std::move(t));
  }
  return DensityMatrix(std::move(s));
}

}  // namespace

TEST_CASE("closure names round-trip") {
  for (Closure c : {Closure::zero, Closure::free_flow, Closure::factorized})
    CHECK(closure_from_name(closure_name(c)) == c);
  CHECK_THROWS_AS(closure_from_name("periodic"), config_error);
}

TEST_CASE("factorized hierarchy structure and traces") {
  GridSpec g = g1d();
  WaveFunction phi = smooth_phi(g);
  HierarchyState st = hierarchy_factorized(phi, 3, {2, -1});
  st.validate();
  CHECK(st.K() == 3);
  for (int k = 1; k <= 3; ++k) {
    CHECK(st.level(k).k() == k);
    CHECK(std::abs(trace(st.level(k)) - cplx(1, 0)) < 1e-12);
  }
  CHECK_THROWS_AS(st.level(4), argument_error);
  CHECK_THROWS_AS(hierarchy_factorized(phi, 0, {2, 1}), argument_error);
}

TEST_CASE("validate rejects mis-ordered levels") {
  GridSpec g = g1d(16);
  WaveFunction phi = smooth_phi(g);
  HierarchyState st = hierarchy_factorized(phi, 2, {2, 1});
  std::swap(st.levels[0], st.levels[1]);
  CHECK_THROWS_AS(st.validate(), shape_error);
}

TEST_CASE("admissibility of a factorized hierarchy") {
  GridSpec g = g1d();
  WaveFunction phi = smooth_phi(g);
  HierarchyState st = hierarchy_factorized(phi, 3, {2, 1});
  AdmissReport rep = check_admissible(st, 1e-12);
  REQUIRE(rep.ks.size() == 2);
  CHECK(rep.pass);
  for (double r : rep.residuals) CHECK(r <= 1e-12);
  CHECK(rep.to_json().find("\"pass\":true") != std::string::npos);
}

TEST_CASE("doubling one level yields residual equal to the lower norm") {
  GridSpec g = g1d();
  WaveFunction phi = smooth_phi(g);  // unit norm
  HierarchyState st = hierarchy_factorized(phi, 2, {2, 1});
  scale(st.level(2), 2.0);
  AdmissReport rep = check_admissible(st, 1e-12);
  REQUIRE(rep.residuals.size() == 1);
  // || 2 gamma1 - gamma1 || = || gamma1 || = ||phi||^2 = 1.
  CHECK(rep.residuals[0] == Catch::Approx(1.0).epsilon(1e-10));
  CHECK_FALSE(rep.pass);
}

TEST_CASE("quintic admissibility steps by two levels") {
  GridSpec g = g1d(16);
  WaveFunction phi = smooth_phi(g);
  HierarchyState st = hierarchy_factorized(phi, 3, {4, -1});
  AdmissReport rep = check_admissible(st, 1e-12);
  REQUIRE(rep.ks.size() == 1);
  CHECK(rep.ks[0] == 1);
  CHECK(rep.pass);

  HierarchyState shallow = hierarchy_factorized(phi, 2, {4, -1});
  CHECK_THROWS_AS(check_admissible(shallow, 1e-12), argument_error);
}

TEST_CASE("partial trace commutes with free propagation") {
  GridSpec g = g1d(24);
  WaveFunction phi = smooth_phi(g, false);
  DensityMatrix g2 = from_factorized(phi, 2, Repr::separable);
  const double t = 0.3;
  DensityMatrix a = partial_trace(free_propagate(g2, t), 1);
  DensityMatrix b = free_propagate(partial_trace(g2, 1), t);
  CHECK(rel_l2_distance(a, b) < 1e-10);
}

TEST_CASE("rank-one extraction recovers the projector") {
  GridSpec g = g1d();
  WaveFunction phi = smooth_phi(g, false);
  wf_scale(phi, 1.7);

  DensityMatrix sep = from_factorized(phi, 1, Repr::separable);
  DensityMatrix den = from_factorized(phi, 1, Repr::dense);

  double ratio = 0;
  WaveFunction ps = rank1_extract(sep, 1e6, &ratio);
  CHECK(ratio > 1e12);
  WaveFunction pd = rank1_extract(den);

  CHECK(rel_l2_distance(from_factorized(ps, 1, Repr::separable), sep) < 1e-12);
  CHECK(rel_l2_distance(from_factorized(pd, 1, Repr::separable), den) < 1e-12);
  CHECK(std::abs(wf_l2_norm(ps) - wf_l2_norm(phi)) < 1e-12);

  // Both routes fix the same phase convention.
  double diff = 0;
  for (std::size_t i = 0; i < ps.v.size(); ++i)
    diff = std::max(diff, std::abs(ps.v[i] - pd.v[i]));
  CHECK(diff < 1e-10);
}

TEST_CASE("rank-one extraction rejects genuinely mixed kernels") {
  GridSpec g = g1d();
  DensityMatrix mixed = dyad_mix(g, {{1.0, plane(g, 0)}, {0.5, plane(g, 3)}});
  CHECK_THROWS_AS(rank1_extract(mixed), state_error);
  CHECK(rank1_ratio(mixed) == Catch::Approx(2.0).epsilon(1e-10));

  // Independent check of the ratio against a dense singular value oracle.
  DenseKernel dk = materialize(mixed);
  const std::uint64_t N = dk.slot_points();
  Eigen::MatrixXcd M(N, N);
  for (std::uint64_t x = 0; x < N; ++x)
    for (std::uint64_t y = 0; y < N; ++y) M(x, y) = dk.a[x * N + y];
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
  double oracle = svd.singularValues()(0) / svd.singularValues()(1);
  CHECK(rank1_ratio(mixed) == Catch::Approx(oracle).epsilon(1e-8));
}

TEST_CASE("zero closure makes the contraction vanish at the top") {
  GridSpec g = g1d(16);
  HierarchyState st = hierarchy_zero(g, 1, {2, 1}, Closure::zero);
  DensityMatrix top = closure_marginal(st, 2);
  CHECK(l2_norm(top) == 0.0);
  auto bhat = apply_B_hat(st);
  REQUIRE(bhat.size() == 1);
  CHECK(l2_norm(bhat[0]) == 0.0);
  CHECK_THROWS_AS(closure_marginal(st, 3), argument_error);
}

TEST_CASE("factorized closure reproduces the factorized contraction") {
  GridSpec g = g1d(24);
  WaveFunction phi = smooth_phi(g);
  ModelParams model{2, -1};
  HierarchyState st = hierarchy_factorized(phi, 2, model, Closure::factorized);
  auto bhat = apply_B_hat(st);
  REQUIRE(bhat.size() == 2);
  for (int k = 1; k <= 2; ++k) {
    DensityMatrix oracle =
        apply_B_full(from_factorized(phi, k + 1, Repr::separable), model);
    CHECK(rel_l2_distance(bhat[k - 1], oracle) < 1e-12);
  }
}

TEST_CASE("factorized closure demands a rank-one bottom level") {
  GridSpec g = g1d(16);
  HierarchyState st = hierarchy_zero(g, 1, {2, 1}, Closure::factorized);
  st.levels[0] = dyad_mix(g, {{0.6, plane(g, 0)}, {0.4, plane(g, 1)}});
  CHECK_THROWS_AS(apply_B_hat(st), state_error);
}

TEST_CASE("free closure equals stored data at the initial time") {
  GridSpec g = g1d(16);
  WaveFunction phi = smooth_phi(g);
  ModelParams model{2, 1};
  HierarchyState st = hierarchy_factorized(phi, 2, model, Closure::free_flow);
  REQUIRE(st.free_top.size() == 1);

  DensityMatrix at0 = closure_marginal(st, 3);
  CHECK(rel_l2_distance(at0, from_factorized(phi, 3, Repr::separable)) < 1e-13);

  st.t = 0.37;
  DensityMatrix att = closure_marginal(st, 3);
  DensityMatrix oracle =
      free_propagate(from_factorized(phi, 3, Repr::separable), 0.37);
  CHECK(rel_l2_distance(att, oracle) < 1e-12);

  // B-hat under the free closure at t: entry 2 uses the flowed top marginal.
  auto bhat = apply_B_hat(st);
  CHECK(rel_l2_distance(bhat[1], apply_B_full(oracle, model)) < 1e-12);

  HierarchyState bare = hierarchy_zero(g, 1, model, Closure::free_flow);
  CHECK_THROWS_AS(closure_marginal(bare, 2), state_error);
}

TEST_CASE("positivity probe finds the smallest eigenvalue") {
  GridSpec g = g1d();

  SECTION("projector has floor zero") {
    DensityMatrix proj = dyad_mix(g, {{1.0, plane(g, 1)}});
    CHECK(std::abs(min_eigenvalue_probe(proj)) < 1e-8);
  }

  SECTION("signed mixture, separable and dense routes agree") {
    DensityMatrix mix =
        dyad_mix(g, {{1.0, plane(g, 0)}, {-0.25, plane(g, 2)}});
    double lam_sep = min_eigenvalue_probe(mix);
    CHECK(lam_sep == Catch::Approx(-0.25).margin(1e-7));
    double lam_den = min_eigenvalue_probe(DensityMatrix(materialize(mix)));
    CHECK(lam_den == Catch::Approx(lam_sep).margin(1e-8));
  }

  SECTION("spread spectrum against an eigensolver oracle") {
    std::vector<std::pair<double, WaveFunction>> parts;
    const double lams[6] = {-0.3, 0.5, 0.6, 0.7, 0.8, 0.9};
    for (int i = 0; i < 6; ++i) parts.push_back({lams[i], plane(g, i - 2)});
    DensityMatrix kern = dyad_mix(g, parts);
    DenseKernel dk = materialize(kern);
    const std::uint64_t N = dk.slot_points();
    const double hd = kern.grid().cell_volume();
    Eigen::MatrixXcd M(N, N);
    for (std::uint64_t x = 0; x < N; ++x)
      for (std::uint64_t y = 0; y < N; ++y) M(x, y) = hd * dk.a[x * N + y];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(M);
    double oracle = es.eigenvalues().minCoeff();
    CHECK(oracle == Catch::Approx(-0.3).margin(1e-10));
    CHECK(min_eigenvalue_probe(kern) == Catch::Approx(oracle).margin(1e-7));
  }

  SECTION("only one-body kernels") {
    WaveFunction phi = smooth_phi(g);
    DensityMatrix g2 = from_factorized(phi, 2, Repr::separable);
    CHECK_THROWS_AS(min_eigenvalue_probe(g2), argument_error);
  }

  SECTION("zero kernel") {
    DensityMatrix z{sep_zero(g, 1)};
    CHECK(min_eigenvalue_probe(z) == 0.0);
  }
}
