#pragma once

// Dataset manifests:
//   classes: name0;name1;...
//   path,label
//   path,label,x1,y1,x2,y2
// '#' starts a comment line; blank lines are ignored.

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cnnzoo/bbox.hpp"
#include "cnnzoo/errors.hpp"

namespace cnnzoo {

struct ManifestRecord {
  std::string path;
  int label = 0;
  std::optional<BBox> box;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct Manifest {
  std::vector<std::string> classes;
  std::vector<ManifestRecord> records;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline Manifest parse_manifest(std::string_view text) {
  Manifest m;
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;

    if (!have_header) {
      constexpr std::string_view key = "classes:";
      if (!line.starts_with(key)) throw ParseError("expected 'classes:' header", line_no);
      for (auto name : detail::split(line.substr(key.size()), ';')) {
        if (name.empty()) throw ParseError("empty class name in header", line_no);
        m.classes.emplace_back(name);
      }
      have_header = true;
      continue;
    }

    const auto fields = detail::split(line, ',');
    if (fields.size() != 2 && fields.size() != 6) {
      throw ParseError("expected 2 or 6 comma-separated fields, got " + std::to_string(fields.size()), line_no);
    }
    ManifestRecord r;
    if (fields[0].empty()) throw ParseError("empty path", line_no);
    r.path = std::string(fields[0]);
    {
      const auto f = fields[1];
      const auto res = std::from_chars(f.data(), f.data() + f.size(), r.label);
      if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) throw ParseError("bad label '" + std::string(f) + "'", line_no);
    }
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= m.classes.size()) {
      throw DataError("line " + std::to_string(line_no) + ": label " + std::to_string(r.label) +
                      " outside class table of " + std::to_string(m.classes.size()));
    }
    if (fields.size() == 6) {
      double c[4];
      for (int k = 0; k < 4; ++k) {
        const auto f = fields[2 + k];
        const auto res = std::from_chars(f.data(), f.data() + f.size(), c[k]);
        if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) {
          throw ParseError("bad box coordinate '" + std::string(f) + "'", line_no);
        }
        if (!(c[k] >= 0.0 && c[k] <= 1.0)) {
          throw DataError("line " + std::to_string(line_no) + ": box coordinate outside [0, 1]");
        }
      }
      r.box = BBox{c[0], c[1], c[2], c[3]}.canonical();
    }
    m.records.push_back(std::move(r));
  }
  if (!have_header) throw ParseError("missing 'classes:' header", line_no);
  return m;
}

inline std::string format_manifest(const Manifest& m) {
  std::ostringstream os;
  os << "classes: ";
  for (std::size_t i = 0; i < m.classes.size(); ++i) {
    if (m.classes[i].find_first_of(";\n#") != std::string::npos) {
      throw ConfigError("class name '" + m.classes[i] + "' contains a reserved character");
    }
    os << (i ? ";" : "") << m.classes[i];
  }
  os << '\n';
  for (const auto& r : m.records) {
    if (r.path.find_first_of(",\n") != std::string::npos || r.path.starts_with('#')) {
      throw ConfigError("manifest path '" + r.path + "' cannot be represented");
    }
    os << r.path << ',' << r.label;
    if (r.box) {
      for (double v : r.box->coords()) os << ',' << detail::format_double(v);
    }
    os << '\n';
  }
  return os.str();
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_manifest(ss.str());
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  const std::string text = format_manifest(m);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace cnnzoo
