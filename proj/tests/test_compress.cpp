#include <catch2/catch_amalgamated.hpp>

#include "gph/compress.hpp"
#include "gph/contraction.hpp"

using namespace gph;

namespace {

WaveFunction random_wf(const GridSpec& g, std::uint64_t seed) {
  rng64 rng(seed);
  WaveFunction w = wf_zero(g);
  for (auto& z : w.v) z = rng.cnormal();
  return w;
}

SeparableKernel random_sep(const GridSpec& g, int k, int terms, std::uint64_t seed,
                           double amp = 1.0) {
  rng64 rng(seed);
  SeparableKernel s = sep_zero(g, k);
  for (int m = 0; m < terms; ++m) {
    SepTerm t;
    t.c = amp * rng.cnormal();
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

double dense_rel_distance(const SeparableKernel& a, const SeparableKernel& b) {
  return rel_l2_distance(DensityMatrix(materialize(a)), DensityMatrix(materialize(b)));
}

}  // namespace

TEST_CASE("k=1 compression is an exact truncated SVD") {
  GridSpec g{1, 16, 8.0};
  SeparableKernel s = random_sep(g, 1, 20, 101);
  CompressOptions opts;
  opts.rel_tol = 1e-12;
  opts.max_rank = 16;
  CompressStats stats;
  SeparableKernel out = compress(s, opts, &stats);
  CHECK(stats.met_tol);
  CHECK(int(out.terms.size()) <= 16);
  CHECK(dense_rel_distance(s, out) < 1e-11);
}

TEST_CASE("k=1 compression finds low rank in noisy near-rank-1 kernels") {
  GridSpec g{1, 16, 8.0};
  WaveFunction phi = random_wf(g, 111);
  SeparableKernel s = from_factorized(phi, 1, Repr::separable).sep();
  SeparableKernel noise = random_sep(g, 1, 10, 112, 1e-9);
  for (auto& t : noise.terms) s.terms.push_back(t);
  CompressOptions opts;
  opts.rel_tol = 1e-6;
  CompressStats stats;
  SeparableKernel out = compress(s, opts, &stats);
  CHECK(stats.met_tol);
  CHECK(out.terms.size() <= 2);
  CHECK(dense_rel_distance(s, out) < 1e-6);
}

TEST_CASE("k=1 rank cap reports failure and keeps the input by default") {
  GridSpec g{1, 16, 8.0};
  SeparableKernel s = random_sep(g, 1, 12, 121);
  CompressOptions opts;
  opts.rel_tol = 1e-14;
  opts.max_rank = 2;  // far below the true rank
  CompressStats stats;
  SeparableKernel out = compress(s, opts, &stats);
  CHECK_FALSE(stats.met_tol);
  CHECK(out.terms.size() == s.terms.size());
  CHECK(dense_rel_distance(s, out) == 0.0);
  // With keep_on_fail off the best truncation comes back instead.
  opts.keep_on_fail = false;
  out = compress(s, opts, &stats);
  CHECK(out.terms.size() == 2);
  CHECK(stats.rel_error > 0.0);
}

TEST_CASE("k=2 compression reduces redundant sums and verifies against dense") {
  GridSpec g{1, 8, 4.0};
  // Build a kernel whose true rank is 3, written as 9 redundant terms.
  SeparableKernel base = random_sep(g, 2, 3, 131);
  SeparableKernel fat = sep_zero(g, 2);
  for (int copy = 0; copy < 3; ++copy)
    for (const auto& t : base.terms) {
      fat.terms.push_back(t);
      fat.terms.back().c /= 3.0;
    }
  CompressOptions opts;
  opts.rel_tol = 1e-10;
  opts.max_rank = 8;
  CompressStats stats;
  SeparableKernel out = compress(fat, opts, &stats);
  CHECK(stats.met_tol);
  CHECK(out.terms.size() <= 4);
  CHECK(dense_rel_distance(fat, out) < 1e-9);
}

TEST_CASE("k=2 near-product kernels compress to tiny rank at tight tolerance") {
  GridSpec g{1, 8, 4.0};
  WaveFunction phi = random_wf(g, 141);
  SeparableKernel s = from_factorized(phi, 2, Repr::separable).sep();
  SeparableKernel noise = random_sep(g, 2, 16, 142, 1e-10);
  for (auto& t : noise.terms) s.terms.push_back(t);
  CompressOptions opts;
  opts.rel_tol = 1e-7;
  CompressStats stats;
  SeparableKernel out = compress(s, opts, &stats);
  CHECK(stats.met_tol);
  CHECK(out.terms.size() <= 3);
  CHECK(dense_rel_distance(s, out) < 1e-7);
}

TEST_CASE("k=3 compression validated against dense materialization") {
  GridSpec g{1, 4, 2.0};
  WaveFunction phi = random_wf(g, 151);
  SeparableKernel s = from_factorized(phi, 3, Repr::separable).sep();
  SeparableKernel extra = random_sep(g, 3, 5, 152, 0.3);
  for (auto& t : extra.terms) s.terms.push_back(t);
  CompressOptions opts;
  opts.rel_tol = 1e-9;
  opts.max_rank = 12;
  CompressStats stats;
  SeparableKernel out = compress(s, opts, &stats);
  INFO("rank=" << stats.rank << " rel_error=" << stats.rel_error);
  if (stats.met_tol) {
    CHECK(dense_rel_distance(s, out) < 2e-9);
  } else {
    // Contract: on failure the kernel is returned unchanged.
    CHECK(out.terms.size() == s.terms.size());
  }
}

TEST_CASE("compression preserves trace and hermiticity within tolerance") {
  GridSpec g{1, 8, 4.0};
  WaveFunction phi = random_wf(g, 161);
  SeparableKernel s = from_factorized(phi, 2, Repr::separable).sep();
  // Add a hermitian perturbation as term pairs.
  SeparableKernel pert = random_sep(g, 2, 4, 162, 1e-4);
  for (const auto& t : pert.terms) {
    s.terms.push_back(t);
    SepTerm adj = t;
    std::swap(adj.ket, adj.bra);
    adj.c = std::conj(t.c);
    s.terms.push_back(std::move(adj));
  }
  cplx tr_before = trace(DensityMatrix(s));
  double herm_before = hermiticity_defect(DensityMatrix(s));
  CompressOptions opts;
  opts.rel_tol = 1e-12;
  CompressStats stats;
  SeparableKernel out = compress(s, opts, &stats);
  REQUIRE(stats.met_tol);
  cplx tr_after = trace(DensityMatrix(out));
  CHECK(std::abs(tr_after - tr_before) < 1e-9 * std::abs(tr_before));
  CHECK(hermiticity_defect(DensityMatrix(out)) < herm_before + 1e-9);
}

TEST_CASE("compression of contraction output stays faithful") {
  GridSpec g{1, 8, 4.0};
  WaveFunction phi = random_wf(g, 171);
  DensityMatrix g3 = from_factorized(phi, 3, Repr::separable);
  ModelParams cubic{2, 1.0};
  DensityMatrix b = apply_B_full(g3, cubic);  // level 2, 4 terms
  CompressOptions opts;
  opts.rel_tol = 1e-12;
  CompressStats stats;
  SeparableKernel out = compress(b.sep(), opts, &stats);
  CHECK(stats.met_tol);
  CHECK(out.terms.size() <= b.sep().terms.size());
  CHECK(dense_rel_distance(b.sep(), out) < 1e-11);
}

TEST_CASE("zero kernels compress to zero terms") {
  GridSpec g{1, 8, 4.0};
  SeparableKernel s = sep_zero(g, 2);
  SepTerm t;
  t.c = 0.0;
  t.ket.assign(2, std::vector<cplx>(8, cplx(1, 0)));
  t.bra.assign(2, std::vector<cplx>(8, cplx(1, 0)));
  s.terms.push_back(t);
  CompressOptions opts;
  CompressStats stats;
  SeparableKernel out = compress(s, opts, &stats);
  CHECK(out.terms.empty());
  CHECK(stats.met_tol);
}
