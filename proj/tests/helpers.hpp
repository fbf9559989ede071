#pragma once

// Shared test utilities: temp dirs, random graph builders, independent
// oracle implementations, and the planted-community synthetic dataset.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "mmpr/graph.hpp"
#include "mmpr/pipeline.hpp"

namespace testutil {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("mmpr_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path.string() : (path / rel).string();
  }
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Random bipartite edge list over nu users / ni items.
inline std::vector<std::pair<std::string, std::string>> random_edges(
    std::mt19937_64& rng, size_t nu, size_t ni, double p) {
  std::bernoulli_distribution coin(p);
  std::vector<std::pair<std::string, std::string>> edges;
  for (size_t u = 0; u < nu; ++u)
    for (size_t i = 0; i < ni; ++i)
      if (coin(rng)) edges.emplace_back("u" + std::to_string(u), "i" + std::to_string(i));
  return edges;
}

// Brute-force k-core fixed point: repeatedly delete any non-anchor node with
// degree < k, in a caller-chosen (possibly randomized) order.
inline std::set<int> kcore_fixed_point(const mmpr::Subgraph& sub, size_t k,
                                       const std::set<int>& anchors,
                                       std::mt19937_64* shuffle_rng = nullptr) {
  std::set<int> alive(sub.nodes.begin(), sub.nodes.end());
  auto degree = [&](int n) {
    size_t d = 0;
    for (int m : sub.adj.at(n))
      if (alive.count(m)) ++d;
    return d;
  };
  for (;;) {
    std::vector<int> victims;
    for (int n : alive)
      if (!anchors.count(n) && degree(n) < k) victims.push_back(n);
    if (victims.empty()) return alive;
    if (shuffle_rng)
      std::shuffle(victims.begin(), victims.end(), *shuffle_rng);
    // remove one at a time so removal order matters for the test
    alive.erase(victims.front());
  }
}

// Exhaustive simple-path enumeration between u and v over a weighted digraph.
struct OraclePath {
  std::vector<int> nodes;
  double length = 0.0;
};

inline void enumerate_paths(const mmpr::WeightedDigraph& wg, int v,
                            std::vector<int>& cur, std::set<int>& used,
                            double len, std::vector<OraclePath>& out) {
  int n = cur.back();
  if (n == v) {
    out.push_back(OraclePath{cur, len});
    return;
  }
  auto it = wg.out.find(n);
  if (it == wg.out.end()) return;
  for (const auto& arc : it->second) {
    if (used.count(arc.dst)) continue;
    used.insert(arc.dst);
    cur.push_back(arc.dst);
    enumerate_paths(wg, v, cur, used, len + arc.weight, out);
    cur.pop_back();
    used.erase(arc.dst);
  }
}

inline std::vector<OraclePath> all_simple_paths(const mmpr::WeightedDigraph& wg,
                                                int u, int v) {
  std::vector<OraclePath> out;
  std::vector<int> cur{u};
  std::set<int> used{u};
  enumerate_paths(wg, v, cur, used, 0.0, out);
  return out;
}

inline void sort_oracle_paths(std::vector<OraclePath>& paths,
                              const mmpr::BipartiteGraph& g) {
  std::sort(paths.begin(), paths.end(),
            [&](const OraclePath& a, const OraclePath& b) {
              if (a.length != b.length) return a.length < b.length;
              if (a.nodes.size() != b.nodes.size())
                return a.nodes.size() < b.nodes.size();
              for (size_t i = 0; i < a.nodes.size(); ++i) {
                if (a.nodes[i] == b.nodes[i]) continue;
                return g.node(a.nodes[i]).id < g.node(b.nodes[i]).id;
              }
              return false;
            });
}

inline mmpr::Vec random_vec(std::mt19937_64& rng, size_t dim, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  mmpr::Vec v(dim);
  for (double& x : v) x = g(rng);
  return v;
}

// ---------------------------------------------------------------------------
// Planted two-community synthetic dataset.
//
// n_items items in sub-clusters of 10; sub-clusters split evenly between two
// communities. Each user interacts mostly inside one sub-cluster plus a few
// extra items from the same community, so intra-community pairs are richly
// connected while cross-community pairs are (nearly) disconnected.

struct SynthDataset {
  std::vector<std::string> users, items;
  std::map<std::string, int> item_community;   // 0 or 1
  std::map<std::string, int> user_community;
  std::map<std::string, std::vector<std::string>> user_items;  // in time order
  std::string emb_text, emb_visual, interactions, profiles, pairs;
};

inline SynthDataset write_synth(const TempDir& dir, size_t n_users,
                                size_t n_items, size_t emb_dim, uint64_t seed,
                                size_t pairs_per_user = 1) {
  SynthDataset ds;
  std::mt19937_64 rng(seed);
  const size_t cluster_size = 10;
  const size_t n_clusters = n_items / cluster_size;

  for (size_t i = 0; i < n_items; ++i) ds.items.push_back("item" + std::to_string(i));
  for (size_t u = 0; u < n_users; ++u) ds.users.push_back("user" + std::to_string(u));
  auto cluster_of = [&](size_t i) { return i / cluster_size; };
  auto community_of_cluster = [&](size_t c) { return c < n_clusters / 2 ? 0 : 1; };
  for (size_t i = 0; i < n_items; ++i)
    ds.item_community[ds.items[i]] = community_of_cluster(cluster_of(i));

  // Cluster centers roughly unit-norm; items = center + small noise, so
  // within-cluster similarity is high and norms are comparable.
  std::vector<mmpr::Vec> centers_t, centers_v;
  for (size_t c = 0; c < n_clusters; ++c) {
    auto ct = random_vec(rng, emb_dim);
    auto cv = random_vec(rng, emb_dim);
    double nt = std::sqrt(mmpr::dot(ct, ct)), nv = std::sqrt(mmpr::dot(cv, cv));
    for (double& x : ct) x /= nt;
    for (double& x : cv) x /= nv;
    centers_t.push_back(ct);
    centers_v.push_back(cv);
  }

  auto write_emb = [&](const std::string& path, const std::vector<mmpr::Vec>& centers) {
    std::ofstream out(path);
    out << "#dim=" << emb_dim << "\n";
    char buf[32];
    for (size_t i = 0; i < n_items; ++i) {
      out << ds.items[i] << '\t';
      const auto& c = centers[cluster_of(i)];
      std::normal_distribution<double> noise(0.0, 0.1);
      for (size_t j = 0; j < emb_dim; ++j) {
        if (j) out << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", c[j] + noise(rng));
        out << buf;
      }
      out << '\n';
    }
  };
  ds.emb_text = dir.str("emb_text.tsv");
  ds.emb_visual = dir.str("emb_visual.tsv");
  write_emb(ds.emb_text, centers_t);
  write_emb(ds.emb_visual, centers_v);

  // Interactions: each user picks a home sub-cluster; ~15 items from it plus
  // ~5 random items from the same community.
  ds.interactions = dir.str("interactions.tsv");
  {
    std::ofstream out(ds.interactions);
    int64_t t = 0;
    std::uniform_int_distribution<size_t> pick_cluster(0, n_clusters - 1);
    for (size_t u = 0; u < n_users; ++u) {
      size_t home = pick_cluster(rng);
      int comm = community_of_cluster(home);
      size_t comm_clusters = comm == 0 ? n_clusters / 2 : n_clusters - n_clusters / 2;
      size_t comm_size = comm_clusters * cluster_size;
      size_t target = std::min<size_t>(13, comm_size > 1 ? comm_size - 1 : 1);
      ds.user_community[ds.users[u]] = comm;
      std::vector<std::string> chosen;
      std::vector<size_t> home_items;
      for (size_t i = 0; i < cluster_size; ++i)
        home_items.push_back(home * cluster_size + i);
      std::shuffle(home_items.begin(), home_items.end(), rng);
      for (size_t i = 0; i < 8 && i < home_items.size(); ++i)
        chosen.push_back(ds.items[home_items[i]]);
      std::uniform_int_distribution<size_t> pick_item(0, n_items - 1);
      while (chosen.size() < target) {
        size_t i = pick_item(rng);
        if (community_of_cluster(cluster_of(i)) != comm) continue;
        const auto& id = ds.items[i];
        if (std::find(chosen.begin(), chosen.end(), id) != chosen.end()) continue;
        chosen.push_back(id);
      }
      // Last interaction comes from the home sub-cluster so held-out items
      // are predictable from the planted structure.
      if (chosen.size() > 8) std::swap(chosen[7], chosen.back());
      for (const auto& id : chosen) out << ds.users[u] << '\t' << id << '\t' << t++ << '\n';
      ds.user_items[ds.users[u]] = chosen;
    }
  }

  ds.profiles = dir.str("profiles.jsonl");
  {
    std::ofstream out(ds.profiles);
    for (const auto& u : ds.users)
      out << R"({"id":")" << u << R"(","kind":"user","profile":"likes community )"
          << ds.user_community[u] << R"( things"})" << "\n";
    for (const auto& i : ds.items)
      out << R"({"id":")" << i << R"(","kind":"item","profile":"a community )"
          << ds.item_community[i] << R"( product","title":"The )" << i << R"("})"
          << "\n";
  }

  // Query pairs: intra-community, item not in the user's history.
  ds.pairs = dir.str("pairs.tsv");
  {
    std::ofstream out(ds.pairs);
    std::uniform_int_distribution<size_t> pick_item(0, n_items - 1);
    for (const auto& u : ds.users) {
      const auto& hist = ds.user_items[u];
      size_t written = 0;
      while (written < pairs_per_user) {
        size_t i = pick_item(rng);
        const auto& id = ds.items[i];
        if (ds.item_community[id] != ds.user_community[u]) continue;
        if (std::find(hist.begin(), hist.end(), id) != hist.end()) continue;
        out << u << '\t' << id << '\n';
        ++written;
      }
    }
  }
  return ds;
}

// Small fully-wired config for pipeline tests.
inline mmpr::Config small_config(const SynthDataset& ds, const std::string& workdir) {
  mmpr::Config cfg;
  cfg.set("workdir", workdir);
  cfg.set("embeddings_text", ds.emb_text);
  cfg.set("embeddings_visual", ds.emb_visual);
  cfg.set("interactions", ds.interactions);
  cfg.set("profiles", ds.profiles);
  cfg.set("pairs", ds.pairs);
  cfg.set("codebook_layers", "2");
  cfg.set("codebook_size", "8");
  cfg.set("latent_dim", "4");
  cfg.set("rq_epochs", "3");
  cfg.set("seq_epochs", "3");
  cfg.set("negatives", "8");
  cfg.set("gnn_dim", "4");
  cfg.set("soft_prompt_dim", "8");
  cfg.set("moe_experts", "2");
  return cfg;
}

}  // namespace testutil
