#ifndef BATCHELOR_IO_HPP
#define BATCHELOR_IO_HPP

// On-disk formats: raw little-endian grids with a JSON sidecar, binary blob
// checkpoints, contour records (text and binary), CSV tables and SVG plots.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "batchelor/contour.hpp"
#include "batchelor/scalar.hpp"

namespace batchelor {

using json = nlohmann::json;

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  else return __builtin_bswap64(v);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw io_error("unexpected end of file");
  return to_le(v);
}
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline std::ofstream open_out(const std::filesystem::path& p, std::ios::openmode mode = std::ios::out) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, mode);
  if (!os) throw io_error("cannot write " + p.string());
  os.exceptions(std::ios::badbit | std::ios::failbit);
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& p, std::ios::openmode mode = std::ios::in) {
  std::ifstream is(p, mode);
  if (!is) throw io_error("cannot read " + p.string());
  return is;
}

}  // namespace detail

inline void write_json(const std::filesystem::path& p, const json& j) {
  auto os = detail::open_out(p);
  os << std::setw(2) << j << '\n';
}

inline json read_json(const std::filesystem::path& p) {
  auto is = detail::open_in(p);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw io_error(p.string() + ": " + e.what());
  }
}

// ---- snapshots ------------------------------------------------------------

/// <stem>.f64 holds nx*ny little-endian doubles, row-major (x fastest);
/// <stem>.json the grid geometry plus whatever the caller puts in `meta`.
inline void write_snapshot(const std::filesystem::path& stem, const FieldGrid& g, json meta = json::object()) {
  {
    auto os = detail::open_out(stem.string() + ".f64", std::ios::binary);
    for (double v : g.values) detail::put_f64(os, v);
  }
  meta["origin"] = {g.origin.x, g.origin.y};
  meta["pixel_size"] = g.pixel_size;
  meta["nx"] = g.nx;
  meta["ny"] = g.ny;
  meta["format"] = "f64le row-major";
  write_json(stem.string() + ".json", meta);
}

inline FieldGrid read_snapshot(const std::filesystem::path& stem, json* meta_out = nullptr) {
  const json meta = read_json(stem.string() + ".json");
  GridShape shape;
  try {
    shape.origin = {meta.at("origin").at(0).get<double>(), meta.at("origin").at(1).get<double>()};
    shape.pixel_size = meta.at("pixel_size").get<double>();
    shape.nx = meta.at("nx").get<std::size_t>();
    shape.ny = meta.at("ny").get<std::size_t>();
  } catch (const json::exception& e) {
    throw io_error(stem.string() + ".json: " + e.what());
  }
  FieldGrid g(shape);
  auto is = detail::open_in(stem.string() + ".f64", std::ios::binary);
  is.seekg(0, std::ios::end);
  if (static_cast<std::uint64_t>(is.tellg()) != 8ULL * shape.nx * shape.ny)
    throw io_error(stem.string() + ".f64: size does not match nx*ny");
  is.seekg(0);
  for (double& v : g.values) v = detail::get_f64(is);
  if (meta_out) *meta_out = meta;
  return g;
}

// ---- blob checkpoints ----------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'B', 'L', 'O', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint64_t kCheckpointVersion = 1;
inline constexpr std::uint64_t kBlobRecordDoubles = 12;

struct Checkpoint {
  BlobDatabase db;
  std::uint64_t next_chunk = 0;
  double t_target = 0.0;
  std::uint64_t config_hash = 0;
};

/// Header: magic, version, record width, next chunk, config hash, t_now,
/// t_target, window, margin, cull threshold, support, blob count.  Each record:
/// t0, r_c, theta0, W (left, log stretch, right), I (angle, major, minor), t.
inline void write_checkpoint(const std::filesystem::path& p, const Checkpoint& c) {
  const std::filesystem::path tmp = p.string() + ".tmp";
  {
    auto os = detail::open_out(tmp, std::ios::binary);
    os.write(kCheckpointMagic, 8);
    detail::put_u64(os, kCheckpointVersion);
    detail::put_u64(os, kBlobRecordDoubles);
    detail::put_u64(os, c.next_chunk);
    detail::put_u64(os, c.config_hash);
    const BlobDatabase& db = c.db;
    for (double v : {db.t_now, c.t_target, db.window.x0, db.window.y0, db.window.x1, db.window.y1,
                     db.spawn_margin, db.cull_threshold, db.support_sigma})
      detail::put_f64(os, v);
    detail::put_u64(os, db.blobs.size());
    for (const Blob& b : db.blobs) {
      for (double v : {b.t0, b.r_c.x, b.r_c.y, b.theta0, b.evo.W.left_angle(), b.evo.W.log_stretch(),
                       b.evo.W.right_angle(), b.evo.I.angle(), b.evo.I.major(), b.evo.I.minor(), b.evo.t0,
                       b.evo.t})
        detail::put_f64(os, v);
    }
  }
  std::filesystem::rename(tmp, p);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& p) {
  auto is = detail::open_in(p, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw io_error(p.string() + ": not a blob checkpoint");
  const std::uint64_t version = detail::get_u64(is);
  if (version != kCheckpointVersion) throw io_error(p.string() + ": unsupported checkpoint version " + std::to_string(version));
  if (detail::get_u64(is) != kBlobRecordDoubles) throw io_error(p.string() + ": unexpected record width");
  Checkpoint c;
  c.next_chunk = detail::get_u64(is);
  c.config_hash = detail::get_u64(is);
  BlobDatabase& db = c.db;
  db.t_now = detail::get_f64(is);
  c.t_target = detail::get_f64(is);
  db.window.x0 = detail::get_f64(is);
  db.window.y0 = detail::get_f64(is);
  db.window.x1 = detail::get_f64(is);
  db.window.y1 = detail::get_f64(is);
  db.spawn_margin = detail::get_f64(is);
  db.cull_threshold = detail::get_f64(is);
  db.support_sigma = detail::get_f64(is);
  const std::uint64_t n = detail::get_u64(is);
  db.blobs.resize(n);
  double r[kBlobRecordDoubles];
  for (Blob& b : db.blobs) {
    for (double& v : r) v = detail::get_f64(is);
    b.t0 = r[0];
    b.r_c = {r[1], r[2]};
    b.theta0 = r[3];
    b.evo.W = UnimodularMap(r[4], r[5], r[6]);
    b.evo.I = Covariance(r[7], r[8], r[9]);
    b.evo.t0 = r[10];
    b.evo.t = r[11];
  }
  if (is.peek() != std::char_traits<char>::eof()) throw io_error(p.string() + ": trailing bytes");
  return c;
}

// ---- contours --------------------------------------------------------------------

struct ContourRecord {
  std::size_t id = 0;
  Contour contour;
  double P = 0.0, R = 0.0, R_gyr = 0.0;
};

inline ContourRecord make_record(std::size_t id, const Contour& c) {
  ContourRecord r{id, c, perimeter(c), 0.0, gyration_radius(c)};
  r.R = mean_radius(c);
  return r;
}

/// One record per contour: "# id closed n level P R R_gyr", then n lines "x y".
inline void write_contours_text(const std::filesystem::path& p, const std::vector<ContourRecord>& rs) {
  auto os = detail::open_out(p);
  os << std::setprecision(17);
  for (const auto& r : rs) {
    os << "# " << r.id << ' ' << (r.contour.closed ? 1 : 0) << ' ' << r.contour.vertices.size() << ' '
       << r.contour.level << ' ' << r.P << ' ' << r.R << ' ' << r.R_gyr << '\n';
    for (Vec2 v : r.contour.vertices) os << v.x << ' ' << v.y << '\n';
  }
}

inline std::vector<ContourRecord> read_contours_text(const std::filesystem::path& p) {
  auto is = detail::open_in(p);
  std::vector<ContourRecord> out;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw io_error(p.string() + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream hs(line);
    char hash;
    int closed;
    std::size_t n;
    ContourRecord r;
    if (!(hs >> hash >> r.id >> closed >> n >> r.contour.level >> r.P >> r.R >> r.R_gyr) || hash != '#')
      fail("bad contour header");
    r.contour.closed = closed != 0;
    r.contour.touches_boundary = !r.contour.closed;
    r.contour.vertices.resize(n);
    for (Vec2& v : r.contour.vertices) {
      ++lineno;
      if (!std::getline(is, line)) fail("truncated contour");
      std::istringstream vs(line);
      if (!(vs >> v.x >> v.y)) fail("bad vertex");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline constexpr char kContourMagic[8] = {'C', 'O', 'N', 'T', 'O', 'U', 'R', '1'};

/// Same fields as the text format, little-endian: magic, count, then per
/// contour id, closed, n, level, P, R, R_gyr and n (x, y) pairs.
inline void write_contours_binary(const std::filesystem::path& p, const std::vector<ContourRecord>& rs) {
  auto os = detail::open_out(p, std::ios::binary);
  os.write(kContourMagic, 8);
  detail::put_u64(os, rs.size());
  for (const auto& r : rs) {
    detail::put_u64(os, r.id);
    detail::put_u64(os, r.contour.closed ? 1 : 0);
    detail::put_u64(os, r.contour.vertices.size());
    for (double v : {r.contour.level, r.P, r.R, r.R_gyr}) detail::put_f64(os, v);
    for (Vec2 v : r.contour.vertices) {
      detail::put_f64(os, v.x);
      detail::put_f64(os, v.y);
    }
  }
}

inline std::vector<ContourRecord> read_contours_binary(const std::filesystem::path& p) {
  auto is = detail::open_in(p, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kContourMagic, 8) != 0) throw io_error(p.string() + ": not a contour file");
  std::vector<ContourRecord> out(detail::get_u64(is));
  for (auto& r : out) {
    r.id = detail::get_u64(is);
    r.contour.closed = detail::get_u64(is) != 0;
    r.contour.touches_boundary = !r.contour.closed;
    r.contour.vertices.resize(detail::get_u64(is));
    r.contour.level = detail::get_f64(is);
    r.P = detail::get_f64(is);
    r.R = detail::get_f64(is);
    r.R_gyr = detail::get_f64(is);
    for (Vec2& v : r.contour.vertices) {
      v.x = detail::get_f64(is);
      v.y = detail::get_f64(is);
    }
  }
  return out;
}

// ---- tables and plots ----------------------------------------------------------

inline void write_csv(const std::filesystem::path& p, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  auto os = detail::open_out(p);
  os << std::setprecision(12);
  for (std::size_t k = 0; k < header.size(); ++k) os << (k ? "," : "") << header[k];
  os << '\n';
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << row[k];
    os << '\n';
  }
}

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
  bool line = false;  // markers otherwise
  std::string color = "#1f77b4";
};

/// Minimal SVG scatter/line plot.  Axes given as log10 when log_x/log_y;
/// non-positive values are skipped on log axes.
inline void write_svg_plot(const std::filesystem::path& p, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<PlotSeries>& series, bool log_x = true,
                           bool log_y = true) {
  auto tx = [&](double v) { return log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
  auto ok = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!log_x || x > 0) && (!log_y || y > 0);
  };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.x.size(); ++k)
      if (ok(s.x[k], s.y[k])) {
        x0 = std::min(x0, tx(s.x[k]));
        x1 = std::max(x1, tx(s.x[k]));
        y0 = std::min(y0, ty(s.y[k]));
        y1 = std::max(y1, ty(s.y[k]));
      }
  if (!(x1 > x0)) x0 -= 0.5, x1 = x0 + 1;
  if (!(y1 > y0)) y0 -= 0.5, y1 = y0 + 1;
  const double W = 640, H = 440, ml = 70, mr = 160, mt = 40, mb = 55;
  auto sx = [&](double v) { return ml + (tx(v) - x0) / (x1 - x0) * (W - ml - mr); };
  auto sy = [&](double v) { return H - mb - (ty(v) - y0) / (y1 - y0) * (H - mt - mb); };
  auto os = detail::open_out(p);
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
     << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr << "\" height=\"" << H - mt - mb
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4, fy = y0 + (y1 - y0) * k / 4;
    const double px = ml + (W - ml - mr) * k / 4, py = H - mb - (H - mt - mb) * k / 4;
    os << "<text x=\"" << px << "\" y=\"" << H - mb + 16 << "\" text-anchor=\"middle\">"
       << (log_x ? "1e" : "") << std::setprecision(3) << fx << "</text>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">" << (log_y ? "1e" : "") << fy
       << "</text>\n"
       << std::setprecision(6);
  }
  os << "<text x=\"" << (W - mr + ml) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xlabel
     << "</text>\n";
  os << "<text transform=\"translate(16," << H / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << ylabel
     << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    if (s.line) {
      os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t k = 0; k < s.x.size(); ++k)
        if (ok(s.x[k], s.y[k])) os << sx(s.x[k]) << ',' << sy(s.y[k]) << ' ';
      os << "\"/>\n";
    } else {
      for (std::size_t k = 0; k < s.x.size(); ++k)
        if (ok(s.x[k], s.y[k]))
          os << "<circle cx=\"" << sx(s.x[k]) << "\" cy=\"" << sy(s.y[k]) << "\" r=\"2.5\" fill=\"" << s.color
             << "\"/>\n";
    }
    os << "<text x=\"" << W - mr + 10 << "\" y=\"" << mt + 14 + 16 * i << "\" fill=\"" << s.color << "\">"
       << s.label << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace batchelor

#endif
