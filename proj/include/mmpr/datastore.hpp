#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmpr/common.hpp"

namespace mmpr {

enum class Modality { text, visual };

inline const char* modality_name(Modality m) {
  return m == Modality::text ? "text" : "visual";
}

// Dense per-item vectors for one modality. Immutable after load.
struct EmbeddingTable {
  Modality modality = Modality::text;
  size_t dim = 0;
  std::map<std::string, Vec> rows;  // item id -> vector, sorted for determinism

  const Vec& at(const std::string& id) const;
  bool contains(const std::string& id) const { return rows.count(id) != 0; }
};

struct Interaction {
  std::string user;
  std::string item;
  int64_t timestamp = 0;
};

struct InteractionLog {
  std::vector<Interaction> entries;  // file order preserved
};

struct ProfileStore {
  std::map<std::string, std::string> user_profiles;
  std::map<std::string, std::string> item_profiles;
  std::map<std::string, std::string> item_titles;
};

struct UserSequence {
  std::string user;
  std::vector<std::string> items;  // non-decreasing timestamp, stable on ties
};

// File format: optional `#dim=N` header, then `id<TAB>v1,v2,...` per line.
EmbeddingTable load_embeddings(const std::string& path, Modality modality);
void save_embeddings(const EmbeddingTable& table, const std::string& path);

// TSV lines `user<TAB>item<TAB>timestamp`.
InteractionLog load_interactions(const std::string& path);
void save_interactions(const InteractionLog& log, const std::string& path);

// Line-delimited JSON records {id, kind: user|item, profile, title?}.
ProfileStore load_profiles(const std::string& path);
void save_profiles(const ProfileStore& store, const std::string& path);

// One sequence per distinct user, items stable-sorted by timestamp.
std::vector<UserSequence> derive_sequences(const InteractionLog& log);

}  // namespace mmpr
