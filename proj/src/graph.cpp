#include "mmpr/graph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>

namespace mmpr {

namespace {

int intern(std::vector<NodeRef>& nodes, std::unordered_map<std::string, int>& index,
           NodeKind kind, const std::string& id, size_t& count) {
  auto it = index.find(id);
  if (it != index.end()) return it->second;
  int idx = static_cast<int>(nodes.size());
  nodes.push_back(NodeRef{kind, id});
  index.emplace(id, idx);
  ++count;
  return idx;
}

}  // namespace

BipartiteGraph BipartiteGraph::from_edges(
    const std::vector<std::pair<std::string, std::string>>& user_item_edges) {
  BipartiteGraph g;
  std::set<std::pair<int, int>> seen;
  for (const auto& [user, item] : user_item_edges) {
    int u = intern(g.nodes_, g.user_index_, NodeKind::user, user, g.num_users_);
    int v = intern(g.nodes_, g.item_index_, NodeKind::item, item, g.num_items_);
    if (!seen.insert({u, v}).second) continue;  // duplicates collapse
    g.adj_.resize(g.nodes_.size());
    g.adj_[u].push_back(v);
    g.adj_[v].push_back(u);
    ++g.num_edges_;
  }
  g.adj_.resize(g.nodes_.size());
  for (auto& nbrs : g.adj_) std::sort(nbrs.begin(), nbrs.end());
  return g;
}

BipartiteGraph BipartiteGraph::build(const InteractionLog& log) {
  std::vector<std::pair<std::string, std::string>> edges;
  edges.reserve(log.entries.size());
  for (const auto& e : log.entries) edges.emplace_back(e.user, e.item);
  return from_edges(edges);
}

int BipartiteGraph::find(NodeKind kind, const std::string& id) const {
  const auto& index = kind == NodeKind::user ? user_index_ : item_index_;
  auto it = index.find(id);
  return it == index.end() ? -1 : it->second;
}

int BipartiteGraph::require(NodeKind kind, const std::string& id) const {
  int idx = find(kind, id);
  if (idx < 0)
    throw Error(ErrorCode::UnknownNode,
                std::string("unknown ") +
                    (kind == NodeKind::user ? "user" : "item") + " node: " + id);
  return idx;
}

bool BipartiteGraph::has_edge(int a, int b) const {
  const auto& nbrs = adj_[a];
  return std::binary_search(nbrs.begin(), nbrs.end(), b);
}

void BipartiteGraph::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write file: " + path);
  std::vector<std::pair<std::string, std::string>> edges;
  for (int u = 0; u < static_cast<int>(nodes_.size()); ++u) {
    if (nodes_[u].kind != NodeKind::user) continue;
    for (int v : adj_[u]) edges.emplace_back(nodes_[u].id, nodes_[v].id);
  }
  std::sort(edges.begin(), edges.end());
  for (const auto& [u, i] : edges) out << u << '\t' << i << '\n';
}

BipartiteGraph BipartiteGraph::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open file: " + path);
  std::vector<std::pair<std::string, std::string>> edges;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw Error(ErrorCode::MalformedLine,
                  path + ": malformed edge at line " + std::to_string(lineno));
    edges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return from_edges(edges);
}

size_t Subgraph::degree(int idx) const {
  auto it = adj.find(idx);
  return it == adj.end() ? 0 : it->second.size();
}

size_t Subgraph::num_edges() const {
  size_t s = 0;
  for (const auto& [_, nbrs] : adj) s += nbrs.size();
  return s / 2;
}

Subgraph induced_subgraph(const BipartiteGraph& g, std::vector<int> nodes) {
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  Subgraph sub;
  sub.parent = &g;
  sub.nodes = std::move(nodes);
  std::unordered_map<int, char> member;
  for (int n : sub.nodes) member[n] = 1;
  for (int n : sub.nodes) {
    std::vector<int> nbrs;
    for (int m : g.neighbors(n))
      if (member.count(m)) nbrs.push_back(m);
    sub.adj.emplace(n, std::move(nbrs));
  }
  return sub;
}

Subgraph l_hop_subgraph(const BipartiteGraph& g, int u, int v, size_t hops) {
  if (u < 0 || v < 0 || u >= static_cast<int>(g.num_nodes()) ||
      v >= static_cast<int>(g.num_nodes()))
    throw Error(ErrorCode::UnknownNode, "l_hop_subgraph: node not in graph");

  std::vector<int> ball;
  std::unordered_map<int, size_t> dist;
  std::deque<int> queue;
  for (int anchor : {u, v}) {
    if (!dist.emplace(anchor, 0).second) continue;
    queue.push_back(anchor);
  }
  while (!queue.empty()) {
    int n = queue.front();
    queue.pop_front();
    size_t dn = dist[n];
    ball.push_back(n);
    if (dn == hops) continue;
    for (int m : g.neighbors(n)) {
      if (dist.emplace(m, dn + 1).second) queue.push_back(m);
    }
  }
  return induced_subgraph(g, std::move(ball));
}

Subgraph k_core(const Subgraph& sub, size_t k, const std::vector<int>& anchors) {
  std::unordered_map<int, size_t> deg;
  std::unordered_map<int, char> removed, is_anchor;
  for (int a : anchors) is_anchor[a] = 1;
  std::deque<int> queue;
  for (int n : sub.nodes) {
    deg[n] = sub.degree(n);
    if (!is_anchor.count(n) && deg[n] < k) queue.push_back(n);
  }
  while (!queue.empty()) {
    int n = queue.front();
    queue.pop_front();
    if (removed.count(n)) continue;
    removed[n] = 1;
    for (int m : sub.adj.at(n)) {
      if (removed.count(m)) continue;
      if (--deg[m] < k && !is_anchor.count(m)) queue.push_back(m);
    }
  }
  // Induce from the subgraph's own adjacency so prior edge removals stick.
  Subgraph out;
  out.parent = sub.parent;
  for (int n : sub.nodes) {
    if (removed.count(n)) continue;
    out.nodes.push_back(n);
    std::vector<int> nbrs;
    for (int m : sub.adj.at(n))
      if (!removed.count(m)) nbrs.push_back(m);
    out.adj.emplace(n, std::move(nbrs));
  }
  return out;
}

Subgraph remove_edge(const Subgraph& sub, int a, int b) {
  Subgraph out = sub;
  auto strip = [&](int x, int y) {
    auto it = out.adj.find(x);
    if (it == out.adj.end()) return;
    auto& nbrs = it->second;
    nbrs.erase(std::remove(nbrs.begin(), nbrs.end(), y), nbrs.end());
  };
  strip(a, b);
  strip(b, a);
  return out;
}

}  // namespace mmpr
