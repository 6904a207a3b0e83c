#pragma once

// JSON persistence for targets, parameters and checkpoints; the flat key=value
// config format; a minimal SVG writer.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bwdln/bwloss.hpp"
#include "bwdln/io_format.hpp"
#include "bwdln/network.hpp"

namespace bwdln {

using Json = nlohmann::json;

inline constexpr const char* kVersion = "0.3.0";

// ---- matrices -------------------------------------------------------------

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j, Eigen::Index cols_if_empty = 0) {
  if (!j.is_array()) throw InputError("matrix JSON must be an array of rows");
  const Eigen::Index r = static_cast<Eigen::Index>(j.size());
  const Eigen::Index c = r ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != c) {
      throw InputError("matrix JSON rows have unequal length");
    }
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw InputError("vector JSON must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

// ---- files ------------------------------------------------------------------

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
}

inline void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

// ---- targets ------------------------------------------------------------------

/// A target together with the eigenbasis and spectrum it was generated from.
struct TargetRecord {
  Matrix omega;
  Vector lambda;
  double tau = 0.0;
  std::uint64_t seed = 0;

  Matrix sigma0() const { return omega * lambda.asDiagonal() * omega.transpose(); }
  Target target() const { return Target::from_covariance(sigma0(), tau); }
};

inline Json target_to_json(const TargetRecord& r) {
  Json j;
  j["kind"] = "target";
  j["n"] = r.lambda.size();
  j["tau"] = r.tau;
  j["seed"] = r.seed;
  j["lambda"] = vector_to_json(r.lambda);
  j["omega"] = matrix_to_json(r.omega);
  j["sigma0"] = matrix_to_json(r.sigma0());
  return j;
}

inline TargetRecord target_from_json(const Json& j) {
  try {
    TargetRecord r;
    r.lambda = vector_from_json(j.at("lambda"));
    r.omega = matrix_from_json(j.at("omega"));
    r.tau = j.value("tau", 0.0);
    r.seed = j.value("seed", std::uint64_t{0});
    if (r.omega.rows() != r.lambda.size() || r.omega.cols() != r.lambda.size()) {
      throw InputError("target JSON: omega and lambda sizes disagree");
    }
    return r;
  } catch (const Json::exception& e) {
    throw InputError(std::string("target JSON: ") + e.what());
  }
}

// ---- parameters and checkpoints ---------------------------------------------

inline Json params_to_json(const NetParams& p) {
  Json j;
  j["kind"] = "params";
  j["depth"] = p.depth();
  j["dims"] = p.dims();
  Json layers = Json::array();
  for (const Matrix& w : p.layers()) layers.push_back(matrix_to_json(w));
  j["layers"] = std::move(layers);
  return j;
}

inline NetParams params_from_json(const Json& j) {
  try {
    const auto dims = j.at("dims").get<std::vector<Eigen::Index>>();
    const Json& layers = j.at("layers");
    if (dims.size() != layers.size() + 1) throw InputError("params JSON: dims and layers disagree");
    std::vector<Matrix> ws;
    for (std::size_t i = 0; i < layers.size(); ++i) ws.push_back(matrix_from_json(layers[i], dims[i]));
    return NetParams(std::move(ws));
  } catch (const Json::exception& e) {
    throw InputError(std::string("params JSON: ") + e.what());
  }
}

/// Parameters plus the integrator state needed to continue a run.
struct Checkpoint {
  NetParams params;
  std::string mode = "flow";
  double t = 0.0;
  double dt = 0.0;
  long index = 0;
};

inline Json checkpoint_to_json(const Checkpoint& c) {
  Json j = params_to_json(c.params);
  j["kind"] = "checkpoint";
  j["mode"] = c.mode;
  j["t"] = c.t;
  j["dt"] = c.dt;
  j["index"] = c.index;
  return j;
}

/// Accepts plain params files as well (t = 0, index = 0).
inline Checkpoint checkpoint_from_json(const Json& j) {
  Checkpoint c;
  c.params = params_from_json(j);
  c.mode = j.value("mode", std::string("flow"));
  c.t = j.value("t", 0.0);
  c.dt = j.value("dt", 0.0);
  c.index = j.value("index", 0L);
  return c;
}

// ---- key=value config ---------------------------------------------------------

/// Flat "key = value" lines; '#' starts a comment. Later keys overwrite earlier ones.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& origin = "config") {
    KeyValueConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw InputError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw InputError(origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : to_double(key, it->second);
  }

  long get_long(const std::string& key, long fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const double d = to_double(key, it->second);
    if (d != std::floor(d)) throw InputError("config key " + key + " must be an integer");
    return static_cast<long>(d);
  }

  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(to_double(key, item));
    }
    return out;
  }

  std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (std::find(known.begin(), known.end(), k) == known.end()) out.push_back(k);
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double d = 0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      throw InputError("config key " + key + ": not a number: " + v);
    }
    if (used != v.size()) throw InputError("config key " + key + ": not a number: " + v);
    return d;
  }

  std::map<std::string, std::string> values_;
};

// ---- SVG ------------------------------------------------------------------------

struct SvgSeries {
  std::string label;
  std::vector<double> x, y;
  std::string color = "#1f77b4";
  bool markers = true;
  bool line = true;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Frame {
  double x0, x1, y0, y1;
  double w = 640, h = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  double px(double x) const { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); }
  double py(double y) const { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); }
};

inline void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
    return;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

inline std::string svg_axes(const Frame& f, const std::string& title, const std::string& xlabel,
                            const std::string& ylabel, bool numeric_ticks = true) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.w << "\" height=\"" << f.h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << f.w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title)
     << "</text>\n";
  os << "<line x1=\"" << f.ml << "\" y1=\"" << f.h - f.mb << "\" x2=\"" << f.w - f.mr << "\" y2=\"" << f.h - f.mb
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << f.ml << "\" y1=\"" << f.mt << "\" x2=\"" << f.ml << "\" y2=\"" << f.h - f.mb
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; numeric_ticks && i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x=\"" << f.px(xv) << "\" y=\"" << f.h - f.mb + 16 << "\" text-anchor=\"middle\">" << num(xv)
       << "</text>\n";
    os << "<text x=\"" << f.ml - 6 << "\" y=\"" << f.py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << f.w / 2 << "\" y=\"" << f.h - 10 << "\" text-anchor=\"middle\">" << svg_escape(xlabel)
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << f.h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << f.h / 2
     << ")\">" << svg_escape(ylabel) << "</text>\n";
  return os.str();
}

}  // namespace detail

inline std::string svg_line_plot(const std::vector<SvgSeries>& series, const std::string& title,
                                 const std::string& xlabel, const std::string& ylabel) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  detail::pad_range(x0, x1);
  detail::pad_range(y0, y1);
  const detail::Frame f{x0, x1, y0, y1};
  std::ostringstream os;
  os << detail::svg_axes(f, title, xlabel, ylabel);
  int legend = 0;
  for (const auto& s : series) {
    if (s.line && s.x.size() > 1) {
      os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) os << f.px(s.x[i]) << "," << f.py(s.y[i]) << " ";
      os << "\"/>\n";
    }
    if (s.markers) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        os << "<circle cx=\"" << f.px(s.x[i]) << "\" cy=\"" << f.py(s.y[i]) << "\" r=\"3\" fill=\"" << s.color
           << "\"/>\n";
      }
    }
    if (!s.label.empty()) {
      const double ly = f.mt + 14.0 * legend++;
      os << "<text x=\"" << f.w - f.mr - 4 << "\" y=\"" << ly << "\" text-anchor=\"end\" fill=\"" << s.color
         << "\">" << detail::svg_escape(s.label) << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

/// Filled grid of values z[i][j] at (x[j], y[i]), shaded from light to dark.
inline std::string svg_grid_plot(const std::vector<double>& x, const std::vector<double>& y,
                                 const std::vector<std::vector<double>>& z, const std::string& title,
                                 const std::string& xlabel, const std::string& ylabel) {
  if (x.empty() || y.empty()) return svg_line_plot({}, title, xlabel, ylabel);
  double zlo = std::numeric_limits<double>::infinity(), zhi = -zlo;
  for (const auto& row : z)
    for (double v : row)
      if (std::isfinite(v)) zlo = std::min(zlo, v), zhi = std::max(zhi, v);
  const double x0 = -0.5, x1 = x.size() - 0.5, y0 = -0.5, y1 = y.size() - 0.5;
  detail::Frame f{x0, x1, y0, y1};
  std::ostringstream os;
  os << detail::svg_axes(f, title, xlabel, ylabel, false);
  const double cw = f.px(1) - f.px(0), ch = f.py(0) - f.py(1);
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double v = i < z.size() && j < z[i].size() ? z[i][j] : std::nan("");
      const double s = std::isfinite(v) && zhi > zlo ? (v - zlo) / (zhi - zlo) : 0.5;
      const int shade = static_cast<int>(235 - 180 * s);
      os << "<rect x=\"" << f.px(j) - cw / 2 << "\" y=\"" << f.py(i) - ch / 2 << "\" width=\"" << cw
         << "\" height=\"" << ch << "\" fill=\"rgb(" << shade << "," << shade << ",255)\"/>\n";
      os << "<text x=\"" << f.px(j) << "\" y=\"" << f.py(i) + 4 << "\" text-anchor=\"middle\">"
         << detail::num(v) << "</text>\n";
    }
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    os << "<text x=\"" << f.px(j) << "\" y=\"" << f.h - f.mb + 16 << "\" text-anchor=\"middle\">"
       << detail::num(x[j]) << "</text>\n";
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    os << "<text x=\"" << f.ml - 6 << "\" y=\"" << f.py(i) + 4 << "\" text-anchor=\"end\">"
       << detail::num(y[i]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace bwdln
