#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "radinv/field.hpp"
#include "radinv/geometry.hpp"
#include "radinv/mesh.hpp"
#include "radinv/renderer.hpp"

// File formats: PPM/PGM images, float32 raw maps, PLY meshes, generator
// checkpoints, TOML-style configs, CSV tables and SVG line plots. Binary
// formats are little-endian regardless of the host.

namespace radinv::io {

namespace fs = std::filesystem;

namespace detail {

inline std::ofstream open_out(const fs::path& path, bool binary = true) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  return f;
}

inline std::ifstream open_in(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  return f;
}

inline void put_u32(std::ostream& o, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  o.write(b, 4);
}

inline void put_f32(std::ostream& o, double v) { put_u32(o, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline double get_f32(std::istream& in) { return static_cast<double>(std::bit_cast<float>(get_u32(in))); }

// Reads the next header token of a PNM file, skipping comments. Comment
// lines are collected so that scale annotations can be recovered.
inline std::string pnm_token(std::istream& in, std::vector<std::string>* comments) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      if (comments) comments->push_back(line);
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (tok.empty()) throw IoError("malformed PNM header");
  return tok;
}

inline int to_int(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw IoError(std::string("malformed ") + what);
    return v;
  } catch (const std::logic_error&) {
    throw IoError(std::string("malformed ") + what);
  }
}

inline std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Images. Pixels are rows of an [H*W, C] matrix in row-major pixel order.

struct Image {
  int width = 0, height = 0;
  Mat pixels;  // [H*W, C]
};

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

/// Binary PPM (P6, 8-bit) from [H*W,3] values in [0,1].
inline void write_ppm(const fs::path& path, const Mat& rgb, int width, int height) {
  if (rgb.rows() != static_cast<Eigen::Index>(width) * height || rgb.cols() != 3)
    throw StructuralError("write_ppm: expected [W*H,3] pixels");
  std::ofstream f = detail::open_out(path);
  f << "P6\n" << width << " " << height << "\n255\n";
  std::vector<char> buf(static_cast<std::size_t>(rgb.size()));
  for (Eigen::Index i = 0; i < rgb.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<char>(to_u8(rgb.data()[i]));
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline Image read_ppm(const fs::path& path) {
  std::ifstream f = detail::open_in(path);
  if (detail::pnm_token(f, nullptr) != "P6") throw IoError("not a binary PPM: " + path.string());
  Image img;
  img.width = detail::to_int(detail::pnm_token(f, nullptr), "PPM width");
  img.height = detail::to_int(detail::pnm_token(f, nullptr), "PPM height");
  if (detail::to_int(detail::pnm_token(f, nullptr), "PPM maxval") != 255) throw IoError("PPM must be 8-bit");
  if (img.width < 1 || img.height < 1) throw IoError("PPM has empty size");
  img.pixels.resize(static_cast<Eigen::Index>(img.width) * img.height, 3);
  std::vector<unsigned char> buf(static_cast<std::size_t>(img.pixels.size()));
  if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw IoError("truncated PPM: " + path.string());
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels.data()[i] = buf[i] / 255.0;
  return img;
}

/// Binary PGM (P5, 16-bit). Values in [0, max_value] map to [0, 65535];
/// max_value is recorded in a header comment and undone by read_pgm16.
inline void write_pgm16(const fs::path& path, const Mat& values, int width, int height, double max_value = 1.0) {
  if (values.rows() != static_cast<Eigen::Index>(width) * height || values.cols() != 1)
    throw StructuralError("write_pgm16: expected [W*H,1] values");
  if (!(max_value > 0.0)) throw StructuralError("write_pgm16: max_value must be > 0");
  std::ofstream f = detail::open_out(path);
  f << "P5\n# scale " << detail::format_double(max_value) << "\n" << width << " " << height << "\n65535\n";
  std::vector<char> buf(static_cast<std::size_t>(values.size()) * 2);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(values(i, 0) / max_value, 0.0, 1.0) * 65535.0));
    buf[2 * static_cast<std::size_t>(i)] = static_cast<char>(v >> 8);  // PGM is big-endian
    buf[2 * static_cast<std::size_t>(i) + 1] = static_cast<char>(v & 0xFF);
  }
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline Image read_pgm16(const fs::path& path) {
  std::ifstream f = detail::open_in(path);
  std::vector<std::string> comments;
  if (detail::pnm_token(f, &comments) != "P5") throw IoError("not a binary PGM: " + path.string());
  Image img;
  img.width = detail::to_int(detail::pnm_token(f, &comments), "PGM width");
  img.height = detail::to_int(detail::pnm_token(f, &comments), "PGM height");
  if (detail::to_int(detail::pnm_token(f, &comments), "PGM maxval") != 65535) throw IoError("PGM must be 16-bit");
  double scale = 1.0;
  for (const std::string& c : comments) {
    std::istringstream ss(c);
    std::string key;
    double v = 0.0;
    if (ss >> key >> v && key == "scale") scale = v;
  }
  img.pixels.resize(static_cast<Eigen::Index>(img.width) * img.height, 1);
  std::vector<unsigned char> buf(static_cast<std::size_t>(img.pixels.size()) * 2);
  if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw IoError("truncated PGM: " + path.string());
  for (Eigen::Index i = 0; i < img.pixels.rows(); ++i) {
    const auto si = static_cast<std::size_t>(i);
    img.pixels(i, 0) = ((buf[2 * si] << 8) | buf[2 * si + 1]) / 65535.0 * scale;
  }
  return img;
}

inline constexpr char kRawMagic[4] = {'R', 'I', 'F', '1'};

/// Float32 map: magic "RIF1", u32 width, height, channels, then row-major data.
inline void write_raw(const fs::path& path, const Mat& values, int width, int height) {
  if (values.rows() != static_cast<Eigen::Index>(width) * height) throw StructuralError("write_raw: size mismatch");
  std::ofstream f = detail::open_out(path);
  f.write(kRawMagic, 4);
  detail::put_u32(f, static_cast<std::uint32_t>(width));
  detail::put_u32(f, static_cast<std::uint32_t>(height));
  detail::put_u32(f, static_cast<std::uint32_t>(values.cols()));
  for (Eigen::Index i = 0; i < values.size(); ++i) detail::put_f32(f, values.data()[i]);
  if (!f) throw IoError("write failed: " + path.string());
}

inline Image read_raw(const fs::path& path) {
  std::ifstream f = detail::open_in(path);
  char magic[4];
  if (!f.read(magic, 4) || !std::equal(magic, magic + 4, kRawMagic)) throw IoError("not a raw float map: " + path.string());
  Image img;
  img.width = static_cast<int>(detail::get_u32(f));
  img.height = static_cast<int>(detail::get_u32(f));
  const auto channels = static_cast<Eigen::Index>(detail::get_u32(f));
  if (img.width < 1 || img.height < 1 || channels < 1 || channels > 4096) throw IoError("bad raw header: " + path.string());
  img.pixels.resize(static_cast<Eigen::Index>(img.width) * img.height, channels);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = detail::get_f32(f);
  return img;
}

// ---------------------------------------------------------------------------
// Meshes

/// PLY with per-vertex uchar colors; ASCII unless `binary` (little-endian).
inline void write_ply(const fs::path& path, const TriMesh& mesh, bool binary = false) {
  std::ofstream f = detail::open_out(path);
  const bool has_color = mesh.colors.size() == mesh.vertices.size();
  f << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
  f << "element vertex " << mesh.vertices.size() << "\n";
  f << "property float x\nproperty float y\nproperty float z\n";
  if (has_color) f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  f << "element face " << mesh.triangles.size() << "\n";
  f << "property list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    if (binary) {
      for (int k = 0; k < 3; ++k) detail::put_f32(f, v(k));
      if (has_color)
        for (int k = 0; k < 3; ++k) f.put(static_cast<char>(to_u8(mesh.colors[i](k))));
    } else {
      f << static_cast<float>(v(0)) << " " << static_cast<float>(v(1)) << " " << static_cast<float>(v(2));
      if (has_color)
        for (int k = 0; k < 3; ++k) f << " " << static_cast<int>(to_u8(mesh.colors[i](k)));
      f << "\n";
    }
  }
  for (const auto& t : mesh.triangles) {
    if (binary) {
      f.put(3);
      for (int k = 0; k < 3; ++k) detail::put_u32(f, static_cast<std::uint32_t>(t[static_cast<std::size_t>(k)]));
    } else {
      f << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
    }
  }
  if (!f) throw IoError("write failed: " + path.string());
}

/// Reads the subset of PLY produced by write_ply.
inline TriMesh read_ply(const fs::path& path) {
  std::ifstream f = detail::open_in(path);
  std::string line;
  bool binary = false, has_color = false;
  std::size_t nv = 0, nf = 0;
  std::getline(f, line);
  if (line != "ply") throw IoError("not a PLY file: " + path.string());
  while (std::getline(f, line) && line != "end_header") {
    std::istringstream ss(line);
    std::string a, b;
    ss >> a >> b;
    if (a == "format") binary = b == "binary_little_endian";
    if (a == "element" && b == "vertex") ss >> nv;
    if (a == "element" && b == "face") ss >> nf;
    if (a == "property" && line.find("red") != std::string::npos) has_color = true;
  }
  TriMesh m;
  m.vertices.resize(nv);
  if (has_color) m.colors.resize(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (binary) {
      for (int k = 0; k < 3; ++k) m.vertices[i](k) = detail::get_f32(f);
      if (has_color)
        for (int k = 0; k < 3; ++k) m.colors[i](k) = static_cast<unsigned char>(f.get()) / 255.0;
    } else {
      f >> m.vertices[i](0) >> m.vertices[i](1) >> m.vertices[i](2);
      if (has_color)
        for (int k = 0; k < 3; ++k) {
          int c = 0;
          f >> c;
          m.colors[i](k) = c / 255.0;
        }
    }
  }
  m.triangles.resize(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    int n = 0;
    if (binary) {
      n = f.get();
      for (int k = 0; k < 3; ++k) m.triangles[i][static_cast<std::size_t>(k)] = static_cast<int>(detail::get_u32(f));
    } else {
      f >> n >> m.triangles[i][0] >> m.triangles[i][1] >> m.triangles[i][2];
    }
    if (n != 3) throw IoError("read_ply: only triangles are supported");
  }
  if (!f) throw IoError("truncated PLY: " + path.string());
  return m;
}

// ---------------------------------------------------------------------------
// Generator checkpoints

inline constexpr char kCheckpointMagic[8] = {'R', 'A', 'D', 'I', 'N', 'V', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedCode {
  std::string name;
  LatentCode code;
};

struct Checkpoint {
  Generator gen;
  std::vector<NamedCode> codes;  // e.g. one fitted latent per scene
};

namespace detail {
inline void put_mat(std::ostream& o, const Mat& m) {
  put_u32(o, static_cast<std::uint32_t>(m.rows()));
  put_u32(o, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) put_f32(o, m.data()[i]);
}
inline Mat get_mat(std::istream& in) {
  const auto r = static_cast<Eigen::Index>(get_u32(in));
  const auto c = static_cast<Eigen::Index>(get_u32(in));
  if (r * c > (Eigen::Index{1} << 28)) throw IoError("checkpoint tensor too large");
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f32(in);
  return m;
}
}  // namespace detail

/// Versioned binary: magic, version, the FieldConfig, every generator
/// tensor (u32 rows, u32 cols, float32 data) and the named latent codes.
inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  std::ofstream f = detail::open_out(path);
  f.write(kCheckpointMagic, 8);
  detail::put_u32(f, kCheckpointVersion);
  const FieldConfig& c = ck.gen.cfg;
  for (int v : {c.dim_z, c.dim_w, c.mapping_hidden, c.channels, c.resolution, c.semantic, c.key_dim, c.hidden,
                c.appearance_dim, static_cast<int>(c.view_dependent)})
    detail::put_u32(f, static_cast<std::uint32_t>(v));
  detail::put_f32(f, c.leaky_slope);
  detail::put_u32(f, static_cast<std::uint32_t>(ck.gen.params.size()));
  for (const Mat& m : ck.gen.params) detail::put_mat(f, m);
  detail::put_u32(f, static_cast<std::uint32_t>(ck.codes.size()));
  for (const NamedCode& nc : ck.codes) {
    detail::put_u32(f, static_cast<std::uint32_t>(nc.name.size()));
    f.write(nc.name.data(), static_cast<std::streamsize>(nc.name.size()));
    detail::put_mat(f, nc.code.w);
  }
  if (!f) throw IoError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  std::ifstream f = detail::open_in(path);
  char magic[8];
  if (!f.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic)) throw IoError("not a checkpoint: " + path.string());
  const std::uint32_t version = detail::get_u32(f);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  FieldConfig c;
  for (int* v : {&c.dim_z, &c.dim_w, &c.mapping_hidden, &c.channels, &c.resolution, &c.semantic, &c.key_dim,
                 &c.hidden, &c.appearance_dim})
    *v = static_cast<int>(detail::get_u32(f));
  c.view_dependent = detail::get_u32(f) != 0;
  c.leaky_slope = detail::get_f32(f);
  Checkpoint ck;
  ck.gen = Generator(c, 0);
  const std::uint32_t n = detail::get_u32(f);
  if (n != ck.gen.params.size()) throw IoError("checkpoint has the wrong number of tensors");
  for (std::size_t i = 0; i < ck.gen.params.size(); ++i) {
    Mat m = detail::get_mat(f);
    if (m.rows() != ck.gen.params[i].rows() || m.cols() != ck.gen.params[i].cols())
      throw IoError("checkpoint tensor " + std::string(kGeneratorParamNames[i]) + " has the wrong shape");
    ck.gen.params[i] = std::move(m);
  }
  const std::uint32_t n_codes = detail::get_u32(f);
  for (std::uint32_t k = 0; k < n_codes; ++k) {
    const std::uint32_t len = detail::get_u32(f);
    if (len > 4096) throw IoError("checkpoint code name too long");
    std::string name(len, '\0');
    if (!f.read(name.data(), len)) throw IoError("truncated checkpoint");
    LatentCode code{detail::get_mat(f)};
    if (code.w.cols() != c.dim_w || (code.w.rows() != 1 && code.w.rows() != kLatentLayers))
      throw IoError("checkpoint latent code has the wrong shape");
    ck.codes.push_back({std::move(name), std::move(code)});
  }
  return ck;
}

// ---------------------------------------------------------------------------
// TOML-style configuration: [section] headers, key = value lines, # comments.
// Values are numbers, booleans or double-quoted strings. Keys are addressed
// as "section.key".

class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin = "<config>") {
    Config cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = strip(strip_comment(line));
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw IoError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
        section = strip(t.substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw IoError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = strip(t.substr(0, eq));
      std::string value = strip(t.substr(eq + 1));
      if (key.empty()) throw IoError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
  }

  static Config load(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config not found: " + path.string());
    return parse(f, path.string());
  }

  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }

  [[nodiscard]] std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  [[nodiscard]] double get(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos == it->second.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw IoError("config key " + key + ": not a number: " + it->second);
  }

  [[nodiscard]] int get(const std::string& key, int fallback) const {
    const double v = get(key, static_cast<double>(fallback));
    if (v != std::floor(v)) throw IoError("config key " + key + ": not an integer");
    return static_cast<int>(v);
  }

  [[nodiscard]] bool get(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw IoError("config key " + key + ": not a boolean: " + it->second);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }
  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Tables and plots

/// CSV with a header row; numbers are printed with 10 significant digits.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : f_(detail::open_out(path, false)) {
    for (std::size_t i = 0; i < header.size(); ++i) f_ << (i ? "," : "") << header[i];
    f_ << "\n";
    f_ << std::setprecision(10);
  }

  template <class... T>
  void row(const T&... cells) {
    bool first = true;
    ((f_ << (first ? "" : ","), f_ << cells, first = false), ...);
    f_ << "\n";
    if (!f_) throw IoError("CSV write failed");
  }

 private:
  std::ofstream f_;
};

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

/// Minimal SVG line chart; deterministic output for identical inputs.
inline void write_svg_plot(const fs::path& path, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<PlotSeries>& series) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const PlotSeries& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1.0;
  if (y1 - y0 < 1e-12) y1 = y0 + 1.0;
  const double w = 640, h = 400, ml = 60, mr = 150, mt = 40, mb = 50;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };
  static constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                            "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ofstream f = detail::open_out(path, false);
  f << std::fixed << std::setprecision(2);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
    << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
    f << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << xv
      << "</text>\n";
    f << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << yv
      << "</text>\n";
  }
  f << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << xlabel << "</text>\n";
  f << "<text x=\"16\" y=\"" << (mt + h - mb) / 2 << "\" transform=\"rotate(-90 16 " << (mt + h - mb) / 2
    << ")\" text-anchor=\"middle\" font-size=\"12\">" << ylabel << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % 8];
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i) f << px(series[k].x[i]) << "," << py(series[k].y[i]) << " ";
    f << "\"/>\n";
    const double ly = mt + 18.0 * static_cast<double>(k);
    f << "<line x1=\"" << w - mr + 10 << "\" y1=\"" << ly << "\" x2=\"" << w - mr + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    f << "<text x=\"" << w - mr + 36 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << series[k].label << "</text>\n";
  }
  f << "</svg>\n";
  if (!f) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Render outputs and dataset records

/// Writes rgb.ppm, mask.pgm, depth.pgm (scaled, see header comment) and
/// canonical.raw into `dir`.
inline void write_render(const fs::path& dir, const RenderOutput& o) {
  write_ppm(dir / "rgb.ppm", o.rgb, o.width, o.height);
  write_pgm16(dir / "mask.pgm", o.mask, o.width, o.height, 1.0);
  const double dmax = std::max(1.0, std::ceil(o.depth.maxCoeff()));
  write_pgm16(dir / "depth.pgm", o.depth, o.width, o.height, dmax);
  write_raw(dir / "canonical.raw", o.canonical, o.width, o.height);
}

/// Reads a directory written by write_render. Depth is optional.
inline RenderOutput read_render(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("render directory not found: " + dir.string());
  const Image rgb = read_ppm(dir / "rgb.ppm");
  const Image mask = read_pgm16(dir / "mask.pgm");
  const Image can = read_raw(dir / "canonical.raw");
  if (mask.width != rgb.width || can.width != rgb.width || mask.height != rgb.height || can.height != rgb.height)
    throw IoError("image sizes disagree in " + dir.string());
  RenderOutput o;
  o.width = rgb.width;
  o.height = rgb.height;
  o.rgb = rgb.pixels;
  o.mask = mask.pixels;
  o.canonical = can.pixels;
  o.depth = fs::exists(dir / "depth.pgm") ? read_pgm16(dir / "depth.pgm").pixels : Mat::Zero(o.mask.rows(), 1);
  return o;
}

/// Key-value text: one "key = v1 v2 ..." line per entry, 17 significant digits.
inline void write_meta(const fs::path& path, const std::vector<std::pair<std::string, std::vector<double>>>& entries) {
  std::ofstream f = detail::open_out(path, false);
  for (const auto& [key, vals] : entries) {
    f << key << " =";
    for (double v : vals) f << " " << detail::format_double(v);
    f << "\n";
  }
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::map<std::string, std::vector<double>> read_meta(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::map<std::string, std::vector<double>> out;
  std::string line;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::istringstream key_ss(line.substr(0, eq)), val_ss(line.substr(eq + 1));
    std::string key;
    key_ss >> key;
    std::vector<double> vals;
    double v = 0.0;
    while (val_ss >> v) vals.push_back(v);
    out[key] = std::move(vals);
  }
  return out;
}

inline std::vector<double> pose_values(const PoseParams& p) {
  const auto a = p.to_array();
  return {a.begin(), a.end()};
}

inline PoseParams pose_from_values(const std::vector<double>& v) {
  if (v.size() != 8) throw IoError("pose entry must have 8 values");
  std::array<double, 8> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return PoseParams::from_array(a);
}

}  // namespace radinv::io
