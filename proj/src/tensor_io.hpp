#pragma once

// Named-vector weight file helpers: `#key=value` metadata headers followed
// by `name<TAB>v1,v2,...` rows. Doubles are written with %.17g so loads
// round-trip exactly.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mmpr/common.hpp"

namespace mmpr::io {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_vec(std::ostream& out, const std::string& name, const Vec& v) {
  out << name << '\t';
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out << ',';
    out << fmt_double(v[i]);
  }
  out << '\n';
}

struct NamedTensors {
  std::map<std::string, std::string> meta;
  std::map<std::string, Vec> vectors;

  const Vec& vec(const std::string& name) const {
    auto it = vectors.find(name);
    if (it == vectors.end())
      throw Error(ErrorCode::MissingField, "weight file missing tensor: " + name);
    return it->second;
  }
  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end())
      throw Error(ErrorCode::MissingField, "weight file missing meta: " + key);
    return it->second;
  }
  int64_t meta_int(const std::string& key) const {
    try {
      return std::stoll(meta_at(key));
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedLine, "weight file meta not an integer: " + key);
    }
  }
  uint64_t meta_u64(const std::string& key) const {
    try {
      return std::stoull(meta_at(key));
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedLine, "weight file meta not an integer: " + key);
    }
  }

  // Rows prefix.0 .. prefix.(n-1), consecutive.
  std::vector<Vec> rows(const std::string& prefix) const {
    std::vector<Vec> out;
    for (size_t i = 0;; ++i) {
      auto it = vectors.find(prefix + "." + std::to_string(i));
      if (it == vectors.end()) break;
      out.push_back(it->second);
    }
    return out;
  }
};

inline NamedTensors read_named_tensors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open file: " + path);
  NamedTensors nt;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq != std::string::npos)
        nt.meta[line.substr(1, eq - 1)] = line.substr(eq + 1);
      continue;
    }
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(ErrorCode::MalformedLine,
                  path + ": malformed tensor row at line " + std::to_string(lineno));
    Vec v;
    std::string_view rest = std::string_view(line).substr(tab + 1);
    while (!rest.empty()) {
      auto comma = rest.find(',');
      std::string_view tok = rest.substr(0, comma);
      double x;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw Error(ErrorCode::MalformedLine,
                    path + ": bad value at line " + std::to_string(lineno));
      v.push_back(x);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    nt.vectors.emplace(line.substr(0, tab), std::move(v));
  }
  return nt;
}

inline void write_rows(std::ostream& out, const std::string& prefix,
                       const std::vector<Vec>& rows) {
  for (size_t i = 0; i < rows.size(); ++i)
    write_vec(out, prefix + "." + std::to_string(i), rows[i]);
}

}  // namespace mmpr::io
