#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mmpr/datastore.hpp"

namespace mmpr {

enum class NodeKind { user, item };

struct NodeRef {
  NodeKind kind;
  std::string id;
  bool operator==(const NodeRef&) const = default;
};

// User-item interaction graph with interned node indices. Immutable after
// build; edges connect opposite kinds only, deduplicated, no self-loops.
class BipartiteGraph {
 public:
  static BipartiteGraph build(const InteractionLog& log);
  static BipartiteGraph from_edges(
      const std::vector<std::pair<std::string, std::string>>& user_item_edges);

  size_t num_nodes() const { return nodes_.size(); }
  size_t num_users() const { return num_users_; }
  size_t num_items() const { return num_items_; }
  size_t num_edges() const { return num_edges_; }

  // -1 if absent.
  int find(NodeKind kind, const std::string& id) const;
  int require(NodeKind kind, const std::string& id) const;

  const NodeRef& node(int idx) const { return nodes_[idx]; }
  const std::vector<int>& neighbors(int idx) const { return adj_[idx]; }
  size_t degree(int idx) const { return adj_[idx].size(); }
  bool has_edge(int a, int b) const;

  // Sorted `user<TAB>item` edge list.
  void save(const std::string& path) const;
  static BipartiteGraph load(const std::string& path);

 private:
  std::vector<NodeRef> nodes_;
  std::vector<std::vector<int>> adj_;  // sorted neighbor indices
  std::unordered_map<std::string, int> user_index_;
  std::unordered_map<std::string, int> item_index_;
  size_t num_users_ = 0;
  size_t num_items_ = 0;
  size_t num_edges_ = 0;
};

// Node subset of a parent graph with induced adjacency, indexed by parent
// node ids.
struct Subgraph {
  const BipartiteGraph* parent = nullptr;
  std::vector<int> nodes;  // sorted parent indices
  std::unordered_map<int, std::vector<int>> adj;  // induced, sorted

  bool contains(int idx) const { return adj.count(idx) != 0; }
  size_t degree(int idx) const;
  size_t num_edges() const;
};

Subgraph induced_subgraph(const BipartiteGraph& g, std::vector<int> nodes);

// Union of BFS balls of radius `hops` around u and v, with induced edges.
Subgraph l_hop_subgraph(const BipartiteGraph& g, int u, int v, size_t hops);

// Iterative peeling; anchors are never enqueued and always survive.
Subgraph k_core(const Subgraph& sub, size_t k, const std::vector<int>& anchors);

// Copy of sub without the edge (a, b), if present.
Subgraph remove_edge(const Subgraph& sub, int a, int b);

}  // namespace mmpr
