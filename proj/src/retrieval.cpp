#include "mmpr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>

namespace mmpr {

const Vec& NodeReps::at(int idx) const {
  if (!has(idx))
    throw Error(ErrorCode::MissingRepresentation,
                "missing representation for node index " + std::to_string(idx));
  return vectors[idx];
}

NodeReps build_node_reps(const BipartiteGraph& g,
                         const std::map<std::string, Vec>& user_reps,
                         const FeatureMap& item_features) {
  NodeReps reps;
  reps.vectors.resize(g.num_nodes());
  reps.present.assign(g.num_nodes(), 0);
  for (size_t i = 0; i < g.num_nodes(); ++i) {
    const NodeRef& n = g.node(static_cast<int>(i));
    const auto& src = n.kind == NodeKind::user
                          ? user_reps
                          : static_cast<const std::map<std::string, Vec>&>(item_features);
    auto it = src.find(n.id);
    if (it != src.end()) {
      reps.vectors[i] = it->second;
      reps.present[i] = 1;
    }
  }
  return reps;
}

WeightedDigraph weight_edges(const Subgraph& sub, const NodeReps& reps, int u,
                             int v, const WeightOptions& opts) {
  const BipartiteGraph& g = *sub.parent;
  WeightedDigraph wg;
  wg.nodes = sub.nodes;

  // Endpoint weight depends only on the arc head: cache per node.
  std::unordered_map<int, double> head_weight;
  for (int n : sub.nodes) {
    size_t deg = sub.degree(n);
    if (deg == 0) continue;  // no arcs point here
    if (g.node(n).kind == NodeKind::item && n == v) {
      head_weight[n] = 1.0;  // terminal arc
      continue;
    }
    int anchor = g.node(n).kind == NodeKind::item
                     ? u
                     : (opts.user_arc_against_item ? v : u);
    double cos = std::clamp(cosine_sim(reps.at(n), reps.at(anchor)), -1.0, 1.0);
    double w = std::log((2.0 - cos) * static_cast<double>(deg));
    if (w < -1e-9)
      throw Error(ErrorCode::NonFiniteValue, "weight_edges: negative edge weight");
    head_weight[n] = std::max(w, 0.0);
  }

  for (int n : sub.nodes) {
    std::vector<Arc> arcs;
    for (int m : sub.adj.at(n)) arcs.push_back(Arc{m, head_weight.at(m)});
    std::sort(arcs.begin(), arcs.end(),
              [](const Arc& a, const Arc& b) { return a.dst < b.dst; });
    wg.out.emplace(n, std::move(arcs));
  }
  return wg;
}

namespace {

double path_length(const WeightedDigraph& wg, const std::vector<int>& nodes) {
  double len = 0.0;
  for (size_t i = 0; i + 1 < nodes.size(); ++i) {
    const auto& arcs = wg.out.at(nodes[i]);
    auto it = std::lower_bound(arcs.begin(), arcs.end(), nodes[i + 1],
                               [](const Arc& a, int dst) { return a.dst < dst; });
    len += it->weight;
  }
  return len;
}

// Deterministic total order: (length, hop count, lexicographic id sequence).
bool path_less(const BipartiteGraph& g, double la, const std::vector<int>& a,
               double lb, const std::vector<int>& b) {
  if (la != lb) return la < lb;
  if (a.size() != b.size()) return a.size() < b.size();
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;
    return g.node(a[i]).id < g.node(b[i]).id;
  }
  return false;
}

struct Label {
  double dist;
  std::vector<int> nodes;
};

// Dijkstra under the composite order; each settled node receives its minimal
// (dist, hops, lex) path. Bans support Yen's spur searches.
std::optional<Label> dijkstra(const WeightedDigraph& wg, const BipartiteGraph& g,
                              int src, int dst,
                              const std::set<int>& banned_nodes,
                              const std::set<std::pair<int, int>>& banned_arcs) {
  auto cmp = [&](const Label& a, const Label& b) {
    // reversed for a min-heap
    if (a.dist != b.dist) return a.dist > b.dist;
    if (a.nodes.size() != b.nodes.size()) return a.nodes.size() > b.nodes.size();
    for (size_t i = 0; i < a.nodes.size(); ++i) {
      if (a.nodes[i] == b.nodes[i]) continue;
      return g.node(a.nodes[i]).id > g.node(b.nodes[i]).id;
    }
    return false;
  };
  std::priority_queue<Label, std::vector<Label>, decltype(cmp)> pq(cmp);
  std::set<int> settled;
  if (banned_nodes.count(src)) return std::nullopt;
  pq.push(Label{0.0, {src}});
  while (!pq.empty()) {
    Label cur = pq.top();
    pq.pop();
    int n = cur.nodes.back();
    if (!settled.insert(n).second) continue;
    if (n == dst) return cur;
    auto it = wg.out.find(n);
    if (it == wg.out.end()) continue;
    for (const Arc& arc : it->second) {
      if (settled.count(arc.dst) || banned_nodes.count(arc.dst)) continue;
      if (banned_arcs.count({n, arc.dst})) continue;
      Label next{cur.dist + arc.weight, cur.nodes};
      next.nodes.push_back(arc.dst);
      pq.push(std::move(next));
    }
  }
  return std::nullopt;
}

}  // namespace

std::vector<RetrievalPath> top_k_paths(const WeightedDigraph& wg,
                                       const BipartiteGraph& g, int u, int v,
                                       size_t k) {
  if (k < 1) throw Error(ErrorCode::InvalidConfig, "top_k_paths: k must be >= 1");
  if (!wg.out.count(u) || !wg.out.count(v)) return {};
  if (u == v) throw Error(ErrorCode::UnknownNode, "top_k_paths: u equals v");

  std::vector<RetrievalPath> accepted;
  auto first = dijkstra(wg, g, u, v, {}, {});
  if (!first) return {};
  accepted.push_back(RetrievalPath{first->nodes, path_length(wg, first->nodes)});

  auto cand_less = [&](const RetrievalPath& a, const RetrievalPath& b) {
    if (path_less(g, a.length, a.nodes, b.length, b.nodes)) return true;
    if (path_less(g, b.length, b.nodes, a.length, a.nodes)) return false;
    return a.nodes < b.nodes;
  };
  std::set<RetrievalPath, decltype(cand_less)> candidates(cand_less);
  std::set<std::vector<int>> known{first->nodes};

  while (accepted.size() < k) {
    const auto& prev = accepted.back().nodes;
    for (size_t spur = 0; spur + 1 < prev.size(); ++spur) {
      std::vector<int> root(prev.begin(), prev.begin() + spur + 1);

      std::set<std::pair<int, int>> banned_arcs;
      for (const auto& p : accepted) {
        if (p.nodes.size() > spur + 1 &&
            std::equal(root.begin(), root.end(), p.nodes.begin()))
          banned_arcs.insert({p.nodes[spur], p.nodes[spur + 1]});
      }
      std::set<int> banned_nodes(root.begin(), root.end() - 1);

      auto spur_path = dijkstra(wg, g, prev[spur], v, banned_nodes, banned_arcs);
      if (!spur_path) continue;

      std::vector<int> full = root;
      full.insert(full.end(), spur_path->nodes.begin() + 1, spur_path->nodes.end());
      if (!known.insert(full).second) continue;
      candidates.insert(RetrievalPath{full, path_length(wg, full)});
    }
    if (candidates.empty()) break;
    accepted.push_back(*candidates.begin());
    candidates.erase(candidates.begin());
  }
  return accepted;
}

std::string render_path(const RetrievalPath& path, const BipartiteGraph& g,
                        const ProfileStore& profiles) {
  std::string out;
  for (size_t i = 0; i < path.nodes.size(); ++i) {
    const NodeRef& n = g.node(path.nodes[i]);
    const auto& table = n.kind == NodeKind::user ? profiles.user_profiles
                                                 : profiles.item_profiles;
    auto it = table.find(n.id);
    if (it == table.end())
      throw Error(ErrorCode::MissingProfile, "render_path: no profile for " + n.id);
    out += it->second;
    if (i + 1 < path.nodes.size())
      out += n.kind == NodeKind::user ? " -> buys -> " : " -> bought by -> ";
  }
  return out;
}

std::string render_prompt(const std::string& user, const std::string& item,
                          const std::vector<RetrievalPath>& paths,
                          const BipartiteGraph& g, const ProfileStore& profiles) {
  auto up = profiles.user_profiles.find(user);
  if (up == profiles.user_profiles.end())
    throw Error(ErrorCode::MissingProfile, "render_prompt: no profile for user " + user);
  auto ip = profiles.item_profiles.find(item);
  if (ip == profiles.item_profiles.end())
    throw Error(ErrorCode::MissingProfile, "render_prompt: no profile for item " + item);
  auto it = profiles.item_titles.find(item);
  if (it == profiles.item_titles.end())
    throw Error(ErrorCode::MissingTitle, "render_prompt: no title for item " + item);

  std::string block;
  if (paths.empty()) {
    block = "\n";
  } else {
    for (size_t i = 0; i < paths.size(); ++i) {
      if (i) block += "\n";
      block += "Path " + std::to_string(i + 1) + ": " +
               render_path(paths[i], g, profiles);
    }
  }

  std::string prompt =
      "Given the item title, item profile, user profile and some retrieval "
      "paths about the user, please explain why the user would enjoy this "
      "item. Item title: " + it->second +
      ". Item profile: " + ip->second +
      ". User Profile: " + up->second +
      ".Here are several related paths which may reflect his/her preference. " +
      block + ". Explanations:";
  return prompt;
}

std::vector<RetrievalPath> retrieve(const BipartiteGraph& g, const NodeReps& reps,
                                    int u, int v, const RetrieveConfig& cfg) {
  if (u < 0 || v < 0)
    throw Error(ErrorCode::UnknownNode, "retrieve: node not in graph");

  // Fallback ladder: relax the core threshold first, then widen the hop
  // radius once.
  for (size_t hops : {cfg.l_hop, cfg.l_hop + 1}) {
    Subgraph base = l_hop_subgraph(g, u, v, hops);
    if (cfg.remove_target_edge) base = remove_edge(base, u, v);
    for (size_t kc = cfg.k_core; kc >= 1; --kc) {
      Subgraph pruned = k_core(base, kc, {u, v});
      WeightedDigraph wg = weight_edges(pruned, reps, u, v, cfg.weights);
      auto paths = top_k_paths(wg, g, u, v, cfg.k_paths);
      if (!paths.empty()) return paths;
    }
  }
  return {};
}

}  // namespace mmpr
