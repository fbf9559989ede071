#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmpr/graph.hpp"
#include "mmpr/userrep.hpp"

namespace mmpr {

// Multimodal representations keyed by parent-graph node index: trained user
// reps for user nodes, item features for item nodes.
struct NodeReps {
  std::vector<Vec> vectors;
  std::vector<char> present;

  const Vec& at(int idx) const;
  bool has(int idx) const {
    return idx >= 0 && idx < static_cast<int>(present.size()) && present[idx];
  }
};

NodeReps build_node_reps(const BipartiteGraph& g,
                         const std::map<std::string, Vec>& user_reps,
                         const FeatureMap& item_features);

struct Arc {
  int dst;        // parent node index
  double weight;  // >= 0
};

// Both directions of every undirected subgraph edge, weighted independently.
struct WeightedDigraph {
  std::vector<int> nodes;  // sorted parent indices
  std::unordered_map<int, std::vector<Arc>> out;
};

// When true, arcs into a user endpoint compare that user against the target
// item v_j instead of the source user u_i.
struct WeightOptions {
  bool user_arc_against_item = false;
};

// weight(arc into n) = ln[(2 - cos(n, anchor)) * deg_sub(n)], with arcs into
// the target item fixed to exactly 1.
WeightedDigraph weight_edges(const Subgraph& sub, const NodeReps& reps, int u,
                             int v, const WeightOptions& opts = {});

struct RetrievalPath {
  std::vector<int> nodes;  // parent indices, u first, v last
  double length = 0.0;
};

// Yen's algorithm over a Dijkstra core; deterministic ties broken by
// (length, hop count, lexicographic node-id sequence).
std::vector<RetrievalPath> top_k_paths(const WeightedDigraph& wg,
                                       const BipartiteGraph& g, int u, int v,
                                       size_t k);

// Profile-text rendering with " -> buys -> " / " -> bought by -> " connectives.
std::string render_path(const RetrievalPath& path, const BipartiteGraph& g,
                        const ProfileStore& profiles);

std::string render_prompt(const std::string& user, const std::string& item,
                          const std::vector<RetrievalPath>& paths,
                          const BipartiteGraph& g, const ProfileStore& profiles);

struct RetrieveConfig {
  size_t l_hop = 3;
  size_t k_core = 2;
  size_t k_paths = 3;
  bool remove_target_edge = true;
  WeightOptions weights;
};

// l_hop_subgraph -> (target-edge removal) -> k_core -> weight_edges ->
// top_k_paths, retrying with k_core-1..1 and then once more at l_hop+1 when
// no path survives pruning.
std::vector<RetrievalPath> retrieve(const BipartiteGraph& g, const NodeReps& reps,
                                    int u, int v, const RetrieveConfig& cfg);

}  // namespace mmpr
