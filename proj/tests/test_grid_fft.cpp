#include <catch2/catch_amalgamated.hpp>

#include "gph/common.hpp"
#include "gph/fft.hpp"
#include "gph/grid.hpp"
#include "gph/wavefunction.hpp"

using namespace gph;

namespace {

// O(n^2) reference DFT matching the unitary convention of fft_line.
std::vector<cplx> naive_dft(const std::vector<cplx>& in, bool inverse) {
  const int n = int(in.size());
  std::vector<cplx> out(n, cplx(0, 0));
  double sign = inverse ? +1.0 : -1.0;
  for (int m = 0; m < n; ++m) {
    cplx s(0, 0);
    for (int j = 0; j < n; ++j)
      s += in[j] * std::exp(cplx(0.0, sign * 2.0 * PI * j * m / n));
    out[m] = s / std::sqrt(double(n));
  }
  return out;
}

std::vector<cplx> random_signal(int n, std::uint64_t seed) {
  rng64 rng(seed);
  std::vector<cplx> v(n);
  for (cplx& z : v) z = rng.cnormal();
  return v;
}

double max_abs_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("grid validation rejects bad parameters") {
  CHECK_THROWS_AS((GridSpec{0, 8, 1.0}.validate()), argument_error);
  CHECK_THROWS_AS((GridSpec{4, 8, 1.0}.validate()), argument_error);
  CHECK_THROWS_AS((GridSpec{1, 7, 1.0}.validate()), argument_error);
  CHECK_THROWS_AS((GridSpec{1, 2, 1.0}.validate()), argument_error);
  CHECK_THROWS_AS((GridSpec{1, 8, 0.0}.validate()), argument_error);
  CHECK_NOTHROW((GridSpec{1, 8, 1.0}.validate()));
  CHECK_NOTHROW((GridSpec{2, 24, 16.0}.validate()));
}

TEST_CASE("frequency layout: positive block then negative, Nyquist at -n/2") {
  GridSpec g{1, 8, 1.0};
  CHECK(g.freq_index(0) == 0);
  CHECK(g.freq_index(3) == 3);
  CHECK(g.freq_index(4) == -4);
  CHECK(g.freq_index(7) == -1);
}

TEST_CASE("bracket weight: unit at m=0 and alpha=0, and 2 at L=2pi,m=1,alpha=2") {
  GridSpec g{1, 8, 2.0 * PI};
  CHECK(bracket_weight(g, 3.7, 0) == Catch::Approx(1.0));
  CHECK(bracket_weight(g, 0.0, 3) == Catch::Approx(1.0));
  CHECK(bracket_weight(g, 2.0, 1) == Catch::Approx(2.0));
  // Monotone in |m| for alpha > 0.
  CHECK(bracket_weight(g, 1.0, 2) > bracket_weight(g, 1.0, 1));
}

TEST_CASE("fft matches the naive DFT for power-of-two lengths") {
  for (int n : {4, 8, 16, 64}) {
    auto sig = random_signal(n, 1000 + n);
    auto want = naive_dft(sig, false);
    auto got = sig;
    fft_line(got.data(), n, false);
    CHECK(max_abs_diff(got, want) < 1e-12);
    auto wanti = naive_dft(sig, true);
    auto goti = sig;
    fft_line(goti.data(), n, true);
    CHECK(max_abs_diff(goti, wanti) < 1e-12);
  }
}

TEST_CASE("fft matches the naive DFT for even non-power-of-two lengths") {
  for (int n : {6, 12, 20, 24, 48}) {
    auto sig = random_signal(n, 2000 + n);
    auto want = naive_dft(sig, false);
    auto got = sig;
    fft_line(got.data(), n, false);
    CHECK(max_abs_diff(got, want) < 1e-11);
  }
}

TEST_CASE("fft is unitary: Parseval and exact round-trip") {
  for (int n : {16, 24}) {
    auto sig = random_signal(n, 37 + n);
    double before = 0;
    for (auto& z : sig) before += std::norm(z);
    auto hat = sig;
    fft_line(hat.data(), n, false);
    double after = 0;
    for (auto& z : hat) after += std::norm(z);
    CHECK(after == Catch::Approx(before).epsilon(1e-12));
    fft_line(hat.data(), n, true);
    CHECK(max_abs_diff(hat, sig) < 1e-12);
  }
}

TEST_CASE("multi-axis slot transform equals axis-by-axis naive DFT") {
  GridSpec g{2, 6, 3.0};
  auto v = random_signal(36, 99);
  auto got = v;
  fft_slot(got.data(), g, false);
  // Rows first (axis 1, stride 1), then columns (axis 0, stride 6).
  std::vector<cplx> want = v;
  for (int r = 0; r < 6; ++r) {
    std::vector<cplx> row(want.begin() + 6 * r, want.begin() + 6 * r + 6);
    row = naive_dft(row, false);
    std::copy(row.begin(), row.end(), want.begin() + 6 * r);
  }
  for (int c = 0; c < 6; ++c) {
    std::vector<cplx> col(6);
    for (int r = 0; r < 6; ++r) col[r] = want[6 * r + c];
    col = naive_dft(col, false);
    for (int r = 0; r < 6; ++r) want[6 * r + c] = col[r];
  }
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("free propagation phases a plane wave by exp(-it|omega|^2)") {
  GridSpec g{1, 32, 2.0 * PI};
  const int m = 2;  // omega = 2
  WaveFunction phi = wf_from_function(
      g, [&](const std::vector<double>& x) { return std::exp(cplx(0, m * x[0])); });
  // t chosen so that exp(-it omega^2) = exp(-i pi) = -1.
  double t = PI / (m * m);
  WaveFunction out = wf_free_propagate(phi, t);
  double err = 0;
  for (std::size_t i = 0; i < out.v.size(); ++i)
    err = std::max(err, std::abs(out.v[i] + phi.v[i]));
  CHECK(err < 1e-12);
}

TEST_CASE("free propagation: identity at t=0, group law, L2 isometry") {
  GridSpec g{1, 32, 8.0};
  rng64 rng(5);
  WaveFunction phi = wf_zero(g);
  for (auto& z : phi.v) z = rng.cnormal();
  WaveFunction same = wf_free_propagate(phi, 0.0);
  CHECK(max_abs_diff(same.v, phi.v) < 1e-13);
  WaveFunction two = wf_free_propagate(wf_free_propagate(phi, 0.3), 0.2);
  WaveFunction once = wf_free_propagate(phi, 0.5);
  CHECK(max_abs_diff(two.v, once.v) < 1e-12);
  CHECK(wf_l2_norm(once) == Catch::Approx(wf_l2_norm(phi)).epsilon(1e-12));
}

TEST_CASE("one-body Sobolev norm of a plane wave is the bracket weight") {
  GridSpec g{1, 16, 2.0 * PI};
  const int m = 3;
  WaveFunction phi = wf_from_function(
      g, [&](const std::vector<double>& x) { return std::exp(cplx(0, m * x[0])); });
  double l2 = wf_l2_norm(phi);
  double want = std::pow(1.0 + double(m) * m, 0.5) * l2;  // alpha = 1
  CHECK(wf_h_alpha_norm(phi, 1.0) == Catch::Approx(want).epsilon(1e-12));
  CHECK(wf_h_alpha_norm(phi, 0.0) == Catch::Approx(l2).epsilon(1e-12));
}

TEST_CASE("2d free propagation is exact on a 24-point grid plane wave") {
  GridSpec g{2, 24, 4.0};
  const int m0 = 2, m1 = -3;
  double w0 = g.omega(m0), w1 = g.omega(m1);
  WaveFunction phi = wf_from_function(g, [&](const std::vector<double>& x) {
    return std::exp(cplx(0, w0 * x[0] + w1 * x[1]));
  });
  double t = 0.17;
  WaveFunction out = wf_free_propagate(phi, t);
  cplx expect = std::exp(cplx(0, -t * (w0 * w0 + w1 * w1)));
  double err = 0;
  for (std::size_t i = 0; i < out.v.size(); ++i)
    err = std::max(err, std::abs(out.v[i] - expect * phi.v[i]));
  CHECK(err < 1e-12);
}

TEST_CASE("deterministic rng and content hash are stable") {
  rng64 a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  // Known SHA-1 of the empty git blob.
  CHECK(git_blob_hash(std::string{}) ==
        "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  // Known SHA-1 of "hello\n" as a git blob.
  CHECK(git_blob_hash(std::string{"hello\n"}) ==
        "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("gauss-legendre rule integrates polynomials exactly") {
  auto rule = gauss_legendre_01(5);
  // degree 9 polynomial: integral of x^9 over [0,1] is 1/10.
  double s = 0;
  for (int i = 0; i < 5; ++i) s += rule.weights[i] * std::pow(rule.nodes[i], 9);
  CHECK(s == Catch::Approx(0.1).epsilon(1e-12));
  double w = 0;
  for (double wi : rule.weights) w += wi;
  CHECK(w == Catch::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("log-log slope recovers exact power laws") {
  std::vector<double> x{1, 2, 4, 8}, y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 1.75));
  CHECK(log_log_slope(x, y) == Catch::Approx(1.75).epsilon(1e-12));
}
