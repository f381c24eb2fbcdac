#pragma once
// Snapshot and run-record persistence: the GPH1 binary tensor format, CSV
// series, JSON records, and self-describing run directories.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gph/common.hpp"
#include "gph/density.hpp"
#include "gph/engine.hpp"
#include "gph/hierarchy.hpp"

namespace gph {

// ---------------------------------------------------------------------------
// GPH1 snapshots.
//
// Layout: the four magic bytes "GPH1"; d, n, k, repr tag (0 dense, 1
// separable) as little-endian int32; L as a little-endian binary64; payload.
// Dense payload: row-major complex entries, all unprimed slots before all
// primed slots, each entry a (re, im) pair of little-endian binary64.
// Separable payload: term count as little-endian int32, then per term the
// coefficient pair followed by the k ket and k bra factor grids, each n^d
// complex pairs. Doubles are copied bitwise, so serialization round-trips
// exactly and hashes are stable.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

inline void put_cplx(std::string& out, cplx z) {
  put_f64(out, z.real());
  put_f64(out, z.imag());
}

struct byte_reader {
  const unsigned char* p;
  std::size_t size;
  std::size_t at = 0;

  void need(std::size_t n) const {
    if (at + n > size) throw argument_error("GPH1 snapshot truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[at + i]) << (8 * i);
    at += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[at + i]) << (8 * i);
    at += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  cplx c128() {
    double re = f64();
    double im = f64();
    return {re, im};
  }
};

}  // namespace detail

inline std::string serialize_gph1(const DensityMatrix& g) {
  const GridSpec& grid = g.grid();
  const int k = g.k();
  std::string out;
  out += "GPH1";
  detail::put_u32(out, std::uint32_t(grid.d));
  detail::put_u32(out, std::uint32_t(grid.n));
  detail::put_u32(out, std::uint32_t(k));
  detail::put_u32(out, g.is_dense() ? 0u : 1u);
  detail::put_f64(out, grid.L);
  if (g.is_dense()) {
    const DenseKernel& dk = g.dense();
    out.reserve(out.size() + 16 * dk.a.size());
    for (cplx z : dk.a) detail::put_cplx(out, z);
    return out;
  }
  const SeparableKernel& s = g.sep();
  detail::put_u32(out, std::uint32_t(s.terms.size()));
  for (const SepTerm& t : s.terms) {
    detail::put_cplx(out, t.c);
    for (int j = 0; j < k; ++j)
      for (cplx z : t.ket[j]) detail::put_cplx(out, z);
    for (int j = 0; j < k; ++j)
      for (cplx z : t.bra[j]) detail::put_cplx(out, z);
  }
  return out;
}

inline DensityMatrix parse_gph1(const std::string& bytes) {
  detail::byte_reader r{reinterpret_cast<const unsigned char*>(bytes.data()),
                        bytes.size()};
  r.need(4);
  if (std::memcmp(bytes.data(), "GPH1", 4) != 0)
    throw argument_error("not a GPH1 snapshot");
  r.at = 4;
  const std::uint32_t d = r.u32();
  const std::uint32_t n = r.u32();
  const std::uint32_t k = r.u32();
  const std::uint32_t tag = r.u32();
  const double L = r.f64();
  if (d < 1 || d > 3 || n < 2 || k < 1)
    throw argument_error("GPH1 snapshot has implausible shape");
  if (tag > 1) throw argument_error("GPH1 snapshot has unknown repr tag");
  if (!(L > 0) || !std::isfinite(L))
    throw argument_error("GPH1 snapshot has invalid box size");
  const GridSpec grid{int(d), int(n), L};
  const std::uint64_t points = grid.slot_points();
  if (tag == 0) {
    // Size the claimed payload before touching it: a header that promises
    // more than the budget fails as a capacity problem, not an allocation.
    const std::uint64_t need = dense_bytes(points, 2 * int(k));
    require_capacity(need, "GPH1 dense payload");
    if (r.size - r.at != need)
      throw argument_error(r.size - r.at < need
                               ? "GPH1 snapshot truncated"
                               : "GPH1 snapshot has trailing bytes");
    DenseKernel dk = dense_zero(grid, int(k));
    for (cplx& z : dk.a) z = r.c128();
    return DensityMatrix(std::move(dk));
  }
  const std::uint32_t terms = r.u32();
  const std::uint64_t factor_bytes = dense_bytes(points, 1);
  if (factor_bytes > (UINT64_MAX - 16) / (2 * std::uint64_t(k)))
    throw argument_error("GPH1 snapshot has implausible shape");
  const std::uint64_t term_bytes = 16 + 2 * std::uint64_t(k) * factor_bytes;
  if (terms != 0 && term_bytes > UINT64_MAX / terms)
    throw argument_error("GPH1 snapshot has implausible shape");
  const std::uint64_t need = std::uint64_t(terms) * term_bytes;
  require_capacity(need, "GPH1 separable payload");
  if (r.size - r.at != need)
    throw argument_error(r.size - r.at < need
                             ? "GPH1 snapshot truncated"
                             : "GPH1 snapshot has trailing bytes");
  SeparableKernel s = sep_zero(grid, int(k));
  s.terms.reserve(terms);
  for (std::uint32_t m = 0; m < terms; ++m) {
    SepTerm t;
    t.c = r.c128();
    t.ket.resize(k);
    t.bra.resize(k);
    for (std::uint32_t j = 0; j < k; ++j) {
      t.ket[j].resize(points);
      for (cplx& z : t.ket[j]) z = r.c128();
    }
    for (std::uint32_t j = 0; j < k; ++j) {
      t.bra[j].resize(points);
      for (cplx& z : t.bra[j]) z = r.c128();
    }
    s.terms.push_back(std::move(t));
  }
  return DensityMatrix(std::move(s));
}

inline void write_bytes(const std::filesystem::path& path,
                        const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw state_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), std::streamsize(bytes.size()));
  f.flush();
  if (!f) throw state_error("short write to " + path.string());
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw state_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_gph1(const std::filesystem::path& path,
                       const DensityMatrix& g) {
  write_bytes(path, serialize_gph1(g));
}

inline DensityMatrix read_gph1(const std::filesystem::path& path) {
  return parse_gph1(read_bytes(path));
}

// Git-style content hash of the serialized snapshot.
inline std::string snapshot_hash(const DensityMatrix& g) {
  return git_blob_hash(serialize_gph1(g));
}

// Per-level hashes concatenated and hashed again, one line per hierarchy.
inline std::string hierarchy_hash(const HierarchyState& st) {
  std::string cat;
  for (const DensityMatrix& g : st.levels) cat += snapshot_hash(g);
  return git_blob_hash(cat);
}

// ---------------------------------------------------------------------------
// Minimal JSON writer. Fixed key order and shortest round-trip numbers keep
// records byte-stable; non-finite numbers come out as null.
// ---------------------------------------------------------------------------

class JsonWriter {
 public:
  const std::string& str() const { return out_; }

  JsonWriter& begin_object() {
    comma();
    out_ += '{';
    fresh_ = true;
    return *this;
  }
  JsonWriter& end_object() {
    out_ += '}';
    fresh_ = false;
    return *this;
  }
  JsonWriter& begin_array() {
    comma();
    out_ += '[';
    fresh_ = true;
    return *this;
  }
  JsonWriter& end_array() {
    out_ += ']';
    fresh_ = false;
    return *this;
  }
  JsonWriter& key(const std::string& name) {
    comma();
    out_ += quote(name);
    out_ += ':';
    fresh_ = true;
    return *this;
  }
  JsonWriter& value(const std::string& v) {
    comma();
    out_ += quote(v);
    return *this;
  }
  JsonWriter& value(const char* v) { return value(std::string(v)); }
  JsonWriter& value(double v) {
    comma();
    out_ += std::isfinite(v) ? format_double(v) : "null";
    return *this;
  }
  JsonWriter& value(std::int64_t v) {
    comma();
    out_ += std::to_string(v);
    return *this;
  }
  JsonWriter& value(int v) { return value(std::int64_t(v)); }
  JsonWriter& value(std::uint64_t v) {
    comma();
    out_ += std::to_string(v);
    return *this;
  }
  JsonWriter& value(bool v) {
    comma();
    out_ += v ? "true" : "false";
    return *this;
  }

  static std::string quote(const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
      switch (c) {
        case '"': q += "\\\""; break;
        case '\\': q += "\\\\"; break;
        case '\n': q += "\\n"; break;
        case '\r': q += "\\r"; break;
        case '\t': q += "\\t"; break;
        default:
          if (static_cast<unsigned char>(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\u%04x", c);
            q += buf;
          } else {
            q += c;
          }
      }
    }
    q += '"';
    return q;
  }

 private:
  void comma() {
    if (!fresh_ && !out_.empty() && out_.back() != ':' && out_.back() != '[' &&
        out_.back() != '{')
      out_ += ',';
    fresh_ = false;
  }
  std::string out_;
  bool fresh_ = true;
};

// ---------------------------------------------------------------------------
// Run records: series.csv columns and the header.json document.
// ---------------------------------------------------------------------------

inline std::string series_csv(const Trajectory& traj) {
  if (traj.rows.empty()) throw argument_error("series_csv: no rows");
  const std::size_t K = traj.rows.front().level_h.size();
  std::string out = "t";
  for (std::size_t k = 1; k <= K; ++k) out += ",h" + std::to_string(k);
  for (std::size_t k = 1; k <= K; ++k) out += ",trace" + std::to_string(k);
  out += ",hnorm_xi1,hnorm_xi2,herm,admissibility,bhat_hnorm,bhat_trace\n";
  for (const RunRow& row : traj.rows) {
    if (row.level_h.size() != K || row.level_trace.size() != K)
      throw state_error("series_csv: ragged rows");
    out += format_double(row.t);
    for (double v : row.level_h) out += "," + format_double(v);
    for (double v : row.level_trace) out += "," + format_double(v);
    out += "," + format_double(row.hnorm_xi1);
    out += "," + format_double(row.hnorm_xi2);
    out += "," + format_double(row.herm);
    out += "," + format_double(row.admiss);
    out += "," + format_double(row.bhat_h);
    out += "," + format_double(row.bhat_trace);
    out += "\n";
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::size_t at = 0;
  bool first = true;
  while (at < text.size()) {
    std::size_t end = text.find('\n', at);
    if (end == std::string::npos) end = text.size();
    std::vector<std::string> cells;
    std::size_t c = at;
    while (c <= end) {
      std::size_t comma = text.find(',', c);
      if (comma == std::string::npos || comma > end) comma = end;
      cells.emplace_back(text.substr(c, comma - c));
      c = comma + 1;
    }
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else if (!(cells.size() == 1 && cells.front().empty())) {
      if (cells.size() != table.header.size())
        throw argument_error("CSV row width differs from header");
      table.rows.push_back(std::move(cells));
    }
    at = end + 1;
  }
  if (table.header.empty()) throw argument_error("CSV has no header");
  return table;
}

inline std::string series_json(const Trajectory& traj) {
  const CsvTable table = parse_csv(series_csv(traj));
  JsonWriter w;
  w.begin_object();
  w.key("columns").begin_array();
  for (const std::string& h : table.header) w.value(h);
  w.end_array();
  w.key("rows").begin_array();
  for (const auto& row : table.rows) {
    w.begin_array();
    for (const std::string& cell : row) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec == std::errc() && p == cell.data() + cell.size())
        w.value(v);
      else
        w.value(cell == "nan" || cell == "inf" || cell == "-inf"
                    ? std::numeric_limits<double>::quiet_NaN()
                    : 0.0);
    }
    w.end_array();
  }
  w.end_array();
  w.end_object();
  return w.str();
}

inline std::string run_header_json(const HierarchyState& g0,
                                   const Trajectory& traj) {
  JsonWriter w;
  w.begin_object();
  w.key("format").value("gph-run/1");
  w.key("model").begin_object();
  w.key("p").value(g0.model.p);
  w.key("mu").value(g0.model.mu);
  w.end_object();
  w.key("grid").begin_object();
  w.key("d").value(g0.grid().d);
  w.key("n").value(g0.grid().n);
  w.key("L").value(g0.grid().L);
  w.end_object();
  w.key("closure").value(closure_name(g0.closure));
  w.key("levels").value(g0.K());
  w.key("engine").begin_object();
  w.key("dt").value(traj.dt);
  w.key("t0").value(traj.t0);
  w.key("alpha").value(traj.alpha);
  w.key("xi1").value(traj.xi1);
  w.key("xi2").value(traj.xi2);
  w.key("compress_tol").value(traj.compress_tol);
  w.key("seed").value(traj.seed);
  w.end_object();
  w.key("rows").value(std::int64_t(traj.rows.size()));
  w.key("snapshots").value(std::int64_t(traj.snapshots.size()));
  w.key("gamma0").begin_object();
  w.key("level_hashes").begin_array();
  for (const DensityMatrix& g : g0.levels) w.value(snapshot_hash(g));
  w.end_array();
  w.key("hash").value(hierarchy_hash(g0));
  w.end_object();
  w.end_object();
  return w.str();
}

// Writes header.json, series.csv, and any snapshots under dir. The record
// is self-describing: the header carries the model, the engine settings,
// and content hashes of the initial data.
inline std::filesystem::path write_run_record(const std::filesystem::path& dir,
                                              const HierarchyState& g0,
                                              const Trajectory& traj) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw state_error("cannot create run directory " + dir.string());
  write_bytes(dir / "header.json", run_header_json(g0, traj));
  write_bytes(dir / "series.csv", series_csv(traj));
  if (!traj.snapshots.empty()) {
    std::filesystem::create_directories(dir / "snapshots", ec);
    if (ec) throw state_error("cannot create snapshot directory");
    for (std::size_t i = 0; i < traj.snapshots.size(); ++i) {
      const HierarchyState& snap = traj.snapshots[i];
      for (int k = 1; k <= snap.K(); ++k) {
        char name[48];
        std::snprintf(name, sizeof(name), "snap_%04zu_k%d.gph1", i, k);
        write_gph1(dir / "snapshots" / name, snap.level(k));
      }
    }
  }
  return dir;
}

}  // namespace gph
