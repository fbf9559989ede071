#include "mmpr/datastore.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace mmpr {

namespace {

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open file: " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write file: " + path);
  return out;
}

bool parse_double(std::string_view s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_int(std::string_view s, int64_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const Vec& EmbeddingTable::at(const std::string& id) const {
  auto it = rows.find(id);
  if (it == rows.end())
    throw Error(ErrorCode::UnknownItem, "unknown item id: " + id);
  return it->second;
}

EmbeddingTable load_embeddings(const std::string& path, Modality modality) {
  auto in = open_input(path);
  EmbeddingTable table;
  table.modality = modality;
  bool dim_set = false;

  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("#dim=", 0) == 0) {
        int64_t d = 0;
        if (!parse_int(std::string_view(line).substr(5), d) || d < 0)
          throw Error(ErrorCode::MalformedLine,
                      path + ": bad #dim header at line " + std::to_string(lineno));
        table.dim = static_cast<size_t>(d);
        dim_set = true;
      }
      continue;
    }
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw Error(ErrorCode::MalformedLine,
                  path + ": missing id field at line " + std::to_string(lineno));
    std::string id = line.substr(0, tab);
    if (table.rows.count(id))
      throw Error(ErrorCode::DuplicateId, path + ": duplicate id: " + id);

    Vec v;
    std::string_view rest = std::string_view(line).substr(tab + 1);
    while (!rest.empty()) {
      auto comma = rest.find(',');
      std::string_view tok = rest.substr(0, comma);
      double x;
      if (!parse_double(tok, x))
        throw Error(ErrorCode::MalformedLine,
                    path + ": bad value at line " + std::to_string(lineno));
      if (!std::isfinite(x))
        throw Error(ErrorCode::NonFiniteValue, path + ": non-finite value for id: " + id);
      v.push_back(x);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (v.empty())
      throw Error(ErrorCode::MalformedLine,
                  path + ": empty vector at line " + std::to_string(lineno));
    if (!dim_set) {
      table.dim = v.size();
      dim_set = true;
    } else if (v.size() != table.dim) {
      throw Error(ErrorCode::DimMismatch,
                  path + ": dim mismatch at line " + std::to_string(lineno) +
                      " (expected " + std::to_string(table.dim) + ", got " +
                      std::to_string(v.size()) + ")");
    }
    table.rows.emplace(std::move(id), std::move(v));
  }
  return table;
}

void save_embeddings(const EmbeddingTable& table, const std::string& path) {
  auto out = open_output(path);
  out << "#dim=" << table.dim << "\n";
  for (const auto& [id, v] : table.rows) {
    out << id << '\t';
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) out << ',';
      out << fmt_double(v[i]);
    }
    out << '\n';
  }
}

InteractionLog load_interactions(const std::string& path) {
  auto in = open_input(path);
  InteractionLog log;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos || t1 == 0 ||
        t2 == t1 + 1)
      throw Error(ErrorCode::MalformedLine,
                  path + ": malformed interaction at line " + std::to_string(lineno));
    Interaction e;
    e.user = line.substr(0, t1);
    e.item = line.substr(t1 + 1, t2 - t1 - 1);
    if (!parse_int(std::string_view(line).substr(t2 + 1), e.timestamp))
      throw Error(ErrorCode::MalformedLine,
                  path + ": bad timestamp at line " + std::to_string(lineno));
    if (e.timestamp < 0)
      throw Error(ErrorCode::NegativeTimestamp,
                  path + ": negative timestamp at line " + std::to_string(lineno));
    log.entries.push_back(std::move(e));
  }
  return log;
}

void save_interactions(const InteractionLog& log, const std::string& path) {
  auto out = open_output(path);
  for (const auto& e : log.entries)
    out << e.user << '\t' << e.item << '\t' << e.timestamp << '\n';
}

ProfileStore load_profiles(const std::string& path) {
  auto in = open_input(path);
  ProfileStore store;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object())
      throw Error(ErrorCode::MalformedRecord,
                  path + ": bad JSON at line " + std::to_string(lineno));
    if (!rec.contains("id") || !rec["id"].is_string())
      throw Error(ErrorCode::MissingField,
                  path + ": missing id at line " + std::to_string(lineno));
    if (!rec.contains("profile") || !rec["profile"].is_string())
      throw Error(ErrorCode::MissingField,
                  path + ": missing profile at line " + std::to_string(lineno));
    std::string kind = rec.value("kind", "");
    std::string id = rec["id"];
    std::string profile = rec["profile"];
    if (kind == "user") {
      store.user_profiles[id] = profile;
    } else if (kind == "item") {
      store.item_profiles[id] = profile;
      if (rec.contains("title") && rec["title"].is_string())
        store.item_titles[id] = rec["title"];
    } else {
      throw Error(ErrorCode::MalformedRecord,
                  path + ": unknown kind \"" + kind + "\" at line " +
                      std::to_string(lineno));
    }
  }
  return store;
}

void save_profiles(const ProfileStore& store, const std::string& path) {
  auto out = open_output(path);
  for (const auto& [id, profile] : store.user_profiles) {
    nlohmann::json rec{{"id", id}, {"kind", "user"}, {"profile", profile}};
    out << rec.dump() << '\n';
  }
  for (const auto& [id, profile] : store.item_profiles) {
    nlohmann::json rec{{"id", id}, {"kind", "item"}, {"profile", profile}};
    auto t = store.item_titles.find(id);
    if (t != store.item_titles.end()) rec["title"] = t->second;
    out << rec.dump() << '\n';
  }
}

std::vector<UserSequence> derive_sequences(const InteractionLog& log) {
  std::map<std::string, std::vector<std::pair<int64_t, std::string>>> by_user;
  for (const auto& e : log.entries)
    by_user[e.user].emplace_back(e.timestamp, e.item);

  std::vector<UserSequence> out;
  out.reserve(by_user.size());
  for (auto& [user, pairs] : by_user) {
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    UserSequence seq;
    seq.user = user;
    seq.items.reserve(pairs.size());
    for (auto& [ts, item] : pairs) seq.items.push_back(std::move(item));
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace mmpr
