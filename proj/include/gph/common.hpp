#pragma once

// Shared utilities: error taxonomy, memory budget, deterministic RNG,
// content hashing, number formatting, small quadrature helpers.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace gph {

using cplx = std::complex<double>;
inline constexpr cplx I{0.0, 1.0};
inline constexpr double PI = 3.14159265358979323846264338327950288;

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto process exit codes:
//   config_error -> 2, capacity_error -> 3, state_error -> 4,
// anything else derived from std::exception -> 1.
// ---------------------------------------------------------------------------

struct error : std::runtime_error {
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

struct argument_error : error {
  explicit argument_error(const std::string& msg) : error(msg) {}
};

struct shape_error : error {
  explicit shape_error(const std::string& msg) : error(msg) {}
};

struct config_error : error {
  explicit config_error(const std::string& msg) : error(msg) {}
};

struct capacity_error : error {
  explicit capacity_error(const std::string& msg) : error(msg) {}
};

struct state_error : error {
  explicit state_error(const std::string& msg) : error(msg) {}
};

struct numeric_error : error {
  explicit numeric_error(const std::string& msg) : error(msg) {}
};

// Fixed-point iteration failure; carries the per-iteration contraction
// factors observed before giving up so callers can report them.
struct convergence_error : error {
  std::vector<double> factors;
  convergence_error(const std::string& msg, std::vector<double> f)
      : error(msg), factors(std::move(f)) {}
};

// ---------------------------------------------------------------------------
// Memory budget for dense kernels. Default 2 GiB, overridable via the
// GPH_MEM_BUDGET environment variable (bytes, or with a K/M/G suffix).
// ---------------------------------------------------------------------------

inline std::uint64_t parse_byte_size(const std::string& s) {
  if (s.empty()) throw config_error("empty byte size");
  std::uint64_t mult = 1;
  std::string num = s;
  switch (s.back()) {
    case 'k': case 'K': mult = 1024ull; num.pop_back(); break;
    case 'm': case 'M': mult = 1024ull * 1024; num.pop_back(); break;
    case 'g': case 'G': mult = 1024ull * 1024 * 1024; num.pop_back(); break;
    default: break;
  }
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
  if (ec != std::errc() || p != num.data() + num.size())
    throw config_error("bad byte size '" + s + "'");
  return v * mult;
}

inline std::uint64_t memory_budget() {
  static const std::uint64_t cached = [] {
    const char* env = std::getenv("GPH_MEM_BUDGET");
    if (env && *env) return parse_byte_size(env);
    return std::uint64_t{2} * 1024 * 1024 * 1024;
  }();
  return cached;
}

inline void require_capacity(std::uint64_t bytes, const std::string& what) {
  if (bytes > memory_budget())
    throw capacity_error(what + " needs " + std::to_string(bytes) +
                         " bytes, budget is " + std::to_string(memory_budget()));
}

// Checked n^e in bytes for a complex array, guarding intermediate overflow.
inline std::uint64_t dense_bytes(std::uint64_t points_per_slot, int slots) {
  std::uint64_t total = sizeof(cplx);
  for (int i = 0; i < slots; ++i) {
    if (points_per_slot != 0 && total > UINT64_MAX / points_per_slot)
      return UINT64_MAX;
    total *= points_per_slot;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. SplitMix64 core with a hand-rolled Box-Muller normal so
// that streams are identical across platforms and standard libraries.
// ---------------------------------------------------------------------------

class rng64 {
 public:
  explicit rng64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  cplx cnormal() {
    double re = normal();
    double im = normal();
    return {re, im};
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// SHA-1, used for git-style content hashes of state snapshots
// ("blob <len>\0" + payload, hex digest).
// ---------------------------------------------------------------------------

class sha1 {
 public:
  sha1() { reset(); }

  void reset() {
    h_[0] = 0x67452301u; h_[1] = 0xEFCDAB89u; h_[2] = 0x98BADCFEu;
    h_[3] = 0x10325476u; h_[4] = 0xC3D2E1F0u;
    len_ = 0;
    buf_used_ = 0;
  }

  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    len_ += n;
    while (n > 0) {
      std::size_t take = std::min(n, std::size_t(64) - buf_used_);
      std::memcpy(buf_ + buf_used_, p, take);
      buf_used_ += take;
      p += take;
      n -= take;
      if (buf_used_ == 64) {
        process(buf_);
        buf_used_ = 0;
      }
    }
  }

  std::string hex_digest() {
    std::uint64_t bits = len_ * 8;
    unsigned char pad = 0x80;
    update(&pad, 1);
    unsigned char zero = 0;
    while (buf_used_ != 56) update(&zero, 1);
    unsigned char lenb[8];
    for (int i = 0; i < 8; ++i) lenb[i] = (unsigned char)(bits >> (56 - 8 * i));
    update(lenb, 8);
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(40);
    for (std::uint32_t v : h_) {
      for (int i = 28; i >= 0; i -= 4) out.push_back(digits[(v >> i) & 0xF]);
    }
    return out;
  }

 private:
  static std::uint32_t rol(std::uint32_t v, int s) {
    return (v << s) | (v >> (32 - s));
  }

  void process(const unsigned char* block) {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i) {
      w[i] = (std::uint32_t(block[4 * i]) << 24) |
             (std::uint32_t(block[4 * i + 1]) << 16) |
             (std::uint32_t(block[4 * i + 2]) << 8) |
             std::uint32_t(block[4 * i + 3]);
    }
    for (int i = 16; i < 80; ++i)
      w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) { f = (b & c) | (~b & d); k = 0x5A827999u; }
      else if (i < 40) { f = b ^ c ^ d; k = 0x6ED9EBA1u; }
      else if (i < 60) { f = (b & c) | (b & d) | (c & d); k = 0x8F1BBCDCu; }
      else { f = b ^ c ^ d; k = 0xCA62C1D6u; }
      std::uint32_t t = rol(a, 5) + f + e + k + w[i];
      e = d; d = c; c = rol(b, 30); b = a; a = t;
    }
    h_[0] += a; h_[1] += b; h_[2] += c; h_[3] += d; h_[4] += e;
  }

  std::uint32_t h_[5];
  std::uint64_t len_ = 0;
  unsigned char buf_[64];
  std::size_t buf_used_ = 0;
};

inline std::string git_blob_hash(const void* data, std::size_t n) {
  sha1 h;
  std::string header = "blob " + std::to_string(n);
  h.update(header.c_str(), header.size() + 1);  // includes the NUL
  h.update(data, n);
  return h.hex_digest();
}

inline std::string git_blob_hash(const std::string& s) {
  return git_blob_hash(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// Number formatting. Shortest round-trip decimal via std::to_chars so CSV and
// JSON output is byte-identical across runs and platforms.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

inline std::string format_complex(cplx z) {
  return format_double(z.real()) + (z.imag() < 0 || std::signbit(z.imag()) ? "" : "+") +
         format_double(z.imag()) + "i";
}

// ---------------------------------------------------------------------------
// Quadrature helpers.
// ---------------------------------------------------------------------------

// Gauss-Legendre nodes and weights on [0,1]. Newton iteration from the
// Chebyshev initial guess; deterministic and accurate to machine precision.
struct quad_rule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline quad_rule gauss_legendre_01(int q) {
  if (q < 1) throw argument_error("quadrature order must be >= 1");
  quad_rule r;
  r.nodes.resize(q);
  r.weights.resize(q);
  for (int i = 0; i < q; ++i) {
    // Root of P_q on [-1,1].
    double x = std::cos(PI * (i + 0.75) / (q + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      if (q == 1) { p1 = x; }
      for (int j = 2; j <= q; ++j) {
        double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      double pq = (q == 1) ? x : p1;
      double pqm1 = (q == 1) ? 1.0 : p0;
      pp = q * (x * pq - pqm1) / (x * x - 1.0);
      double dx = pq / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    r.nodes[q - 1 - i] = 0.5 * (x + 1.0);
    r.weights[q - 1 - i] = 1.0 / ((1.0 - x * x) * pp * pp);
  }
  return r;
}

// Composite trapezoid weights for m+1 uniform samples spanning [0,T].
inline std::vector<double> trapezoid_weights(int samples, double T) {
  if (samples < 2) throw argument_error("trapezoid needs >= 2 samples");
  double dt = T / (samples - 1);
  std::vector<double> w(samples, dt);
  w.front() = 0.5 * dt;
  w.back() = 0.5 * dt;
  return w;
}

// Composite Simpson weights over an even number of uniform intervals on
// [0,T]; returns intervals+1 weights.
inline std::vector<double> simpson_weights(int intervals, double T) {
  if (intervals < 2 || intervals % 2 != 0)
    throw argument_error("simpson needs an even interval count >= 2");
  const double h = T / intervals;
  std::vector<double> w(std::size_t(intervals) + 1, h / 3.0);
  for (int i = 1; i < intervals; ++i) w[i] *= (i % 2 ? 4.0 : 2.0);
  return w;
}

// ---------------------------------------------------------------------------
// Double-double arithmetic (Dekker/Knuth error-free transforms). Plain
// double Gram evaluations bottom out near sqrt(eps) when the quantity being
// measured is a near-cancellation of O(1) inner products; carrying the
// rounding residue in a second limb pushes that floor down to ~1e-15.
// ---------------------------------------------------------------------------

namespace dd {

struct real {
  double hi = 0.0, lo = 0.0;
};

inline real two_sum(double a, double b) {
  double s = a + b;
  double bb = s - a;
  return {s, (a - (s - bb)) + (b - bb)};
}

inline real quick_renorm(double hi, double lo) {
  double s = hi + lo;
  return {s, lo - (s - hi)};
}

inline real two_prod(double a, double b) {
  double p = a * b;
  return {p, std::fma(a, b, -p)};
}

inline real add(real a, real b) {
  real s = two_sum(a.hi, b.hi);
  return quick_renorm(s.hi, s.lo + a.lo + b.lo);
}

inline real mul(real a, real b) {
  real p = two_prod(a.hi, b.hi);
  return quick_renorm(p.hi, p.lo + a.hi * b.lo + a.lo * b.hi);
}

inline real from(double v) { return {v, 0.0}; }
inline real neg(real a) { return {-a.hi, -a.lo}; }

struct complex {
  real re, im;
};

inline complex from(cplx z) { return {from(z.real()), from(z.imag())}; }
inline complex conj(complex z) { return {z.re, neg(z.im)}; }

inline complex add(complex a, complex b) {
  return {add(a.re, b.re), add(a.im, b.im)};
}

inline complex mul(complex a, complex b) {
  return {add(mul(a.re, b.re), neg(mul(a.im, b.im))),
          add(mul(a.re, b.im), mul(a.im, b.re))};
}

// sum_m conj(a_m) b_m, accumulated without losing the rounding residue.
inline complex dot(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  complex acc;
  for (std::size_t m = 0; m < a.size(); ++m)
    acc = add(acc, mul(conj(from(a[m])), from(b[m])));
  return acc;
}

}  // namespace dd

// ---------------------------------------------------------------------------
// Optional data parallelism. Math results must not depend on the thread
// count, so this is only used for loops whose iterations write disjoint
// ranges. The count is a process-global set from the CLI --threads flag.
// ---------------------------------------------------------------------------

inline int& global_thread_count() {
  static int n = 1;
  return n;
}

template <class F>
inline void parallel_for(std::uint64_t n, F&& body) {
  const int threads = global_thread_count();
  if (threads <= 1 || n < 64) {
    for (std::uint64_t i = 0; i < n; ++i) body(i);
    return;
  }
  const int workers = int(std::min<std::uint64_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    std::uint64_t begin = n * w / workers;
    std::uint64_t end = n * (w + 1) / workers;
    pool.emplace_back([&body, begin, end] {
      for (std::uint64_t i = begin; i < end; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

// Least-squares slope of log(y) against log(x); used for scaling-exponent fits.
inline double log_log_slope(const std::vector<double>& x,
                            const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw argument_error("slope fit needs matching arrays of length >= 2");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int n = int(x.size());
  for (int i = 0; i < n; ++i) {
    if (x[i] <= 0 || y[i] <= 0)
      throw numeric_error("log-log fit requires positive data");
    double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
  }
  double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) throw numeric_error("degenerate slope fit");
  return (n * sxy - sx * sy) / denom;
}

}  // namespace gph
