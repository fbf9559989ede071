#include "mmpr/encoder.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "tensor_io.hpp"

namespace mmpr {

namespace {

std::vector<Vec> gaussian_matrix(size_t rows, size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(double(cols)));
  std::vector<Vec> m(rows, Vec(cols));
  for (auto& row : m)
    for (double& x : row) x = g(rng);
  return m;
}

Vec matvec(const std::vector<Vec>& m, const Vec& x) {
  Vec y(m.size());
  for (size_t i = 0; i < m.size(); ++i) y[i] = dot(m[i], x);
  return y;
}

}  // namespace

GNNParams init_gnn(size_t in_dim, size_t out_dim, uint64_t seed) {
  GNNParams p;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  std::mt19937_64 rng(seed);
  p.weight = gaussian_matrix(out_dim, in_dim, rng);
  p.bias.assign(out_dim, 0.0);
  return p;
}

MoEParams init_moe(size_t in_dim, size_t out_dim, size_t n_experts,
                   uint64_t seed) {
  if (n_experts < 1)
    throw Error(ErrorCode::InvalidConfig, "init_moe: need at least one expert");
  MoEParams p;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  std::mt19937_64 rng(seed);
  for (size_t i = 0; i < n_experts; ++i) {
    p.expert_w.push_back(gaussian_matrix(out_dim, in_dim, rng));
    p.expert_b.emplace_back(out_dim, 0.0);
  }
  p.gate = gaussian_matrix(in_dim, n_experts, rng);
  return p;
}

Subgraph retrieval_subgraph(const BipartiteGraph& g, const RetrievalPath& path) {
  std::vector<int> nodes;
  for (int n : path.nodes) {
    if (n < 0 || n >= static_cast<int>(g.num_nodes()))
      throw Error(ErrorCode::UnknownNode, "retrieval_subgraph: node not in graph");
    nodes.push_back(n);
    for (int m : g.neighbors(n)) nodes.push_back(m);
  }
  return induced_subgraph(g, std::move(nodes));
}

Vec gnn_encode(const Subgraph& sub, const NodeReps& reps, const GNNParams& params) {
  if (sub.nodes.empty())
    throw Error(ErrorCode::EmptyInput, "gnn_encode: empty subgraph");
  Vec graph_out(params.out_dim, 0.0);
  for (int n : sub.nodes) {
    // message = mean of self and neighbor representations
    Vec msg = reps.at(n);
    const auto& nbrs = sub.adj.at(n);
    for (int m : nbrs)
      for (size_t j = 0; j < msg.size(); ++j) msg[j] += reps.at(m)[j];
    for (double& x : msg) x /= static_cast<double>(nbrs.size() + 1);

    Vec out = matvec(params.weight, msg);
    for (size_t i = 0; i < params.out_dim; ++i) {
      out[i] += params.bias[i];
      if (params.activation == Activation::relu && out[i] < 0.0) out[i] = 0.0;
      graph_out[i] += out[i];
    }
  }
  for (double& x : graph_out) x /= static_cast<double>(sub.nodes.size());
  return graph_out;
}

Vec concat_paths(const std::vector<Vec>& encodings, size_t k, size_t d_g) {
  if (encodings.size() > k)
    throw Error(ErrorCode::TooManyPaths,
                "concat_paths: " + std::to_string(encodings.size()) +
                    " encodings for k=" + std::to_string(k));
  Vec out;
  out.reserve(k * d_g);
  for (const auto& e : encodings) {
    if (e.size() != d_g)
      throw Error(ErrorCode::DimMismatch, "concat_paths: encoding dim mismatch");
    out.insert(out.end(), e.begin(), e.end());
  }
  out.resize(k * d_g, 0.0);  // zero-pad missing slots
  return out;
}

Vec softmax_gate(const Vec& x, const MoEParams& params) {
  if (x.size() != params.in_dim)
    throw Error(ErrorCode::DimMismatch, "moe: input dim mismatch");
  const size_t n = params.num_experts();
  Vec logits(n, 0.0);
  for (size_t j = 0; j < params.in_dim; ++j)
    for (size_t i = 0; i < n; ++i) logits[i] += x[j] * params.gate[j][i];
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    sum += l;
  }
  for (double& l : logits) l /= sum;
  return logits;
}

Vec moe_forward(const Vec& x, const MoEParams& params, bool training,
                uint64_t dropout_seed) {
  Vec input = x;
  if (training && params.dropout > 0.0) {
    std::mt19937_64 rng(dropout_seed);
    std::bernoulli_distribution drop(params.dropout);
    for (double& v : input)
      v = drop(rng) ? 0.0 : v / (1.0 - params.dropout);
  }
  Vec gate = softmax_gate(input, params);
  Vec y(params.out_dim, 0.0);
  for (size_t i = 0; i < params.num_experts(); ++i) {
    Vec e = matvec(params.expert_w[i], input);
    for (size_t j = 0; j < params.out_dim; ++j)
      y[j] += gate[i] * (e[j] + params.expert_b[i][j]);
  }
  return y;
}

size_t export_bundle(const SoftPromptBundle& bundle, std::ostream& out) {
  if (!all_finite(bundle.soft_prompt))
    throw Error(ErrorCode::NonFiniteValue, "export_bundle: non-finite soft prompt");
  nlohmann::json rec;
  rec["user"] = bundle.user;
  rec["item"] = bundle.item;
  rec["prompt"] = bundle.hard_prompt;
  rec["paths"] = bundle.paths;
  rec["soft_prompt"] = bundle.soft_prompt;
  rec["meta"] = {{"config_hash", bundle.config_hash},
                 {"seed", bundle.seed},
                 {"version", bundle.version}};
  out << rec.dump() << '\n';
  if (!out) throw Error(ErrorCode::Io, "export_bundle: write failed");
  return 1;
}

void save_gnn(const GNNParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write file: " + path);
  out << "#in=" << p.in_dim << "\n#out=" << p.out_dim << "\n#activation="
      << (p.activation == Activation::relu ? "relu" : "identity") << "\n";
  io::write_rows(out, "w", p.weight);
  io::write_vec(out, "b", p.bias);
}

GNNParams load_gnn(const std::string& path) {
  auto nt = io::read_named_tensors(path);
  GNNParams p;
  p.in_dim = static_cast<size_t>(nt.meta_int("in"));
  p.out_dim = static_cast<size_t>(nt.meta_int("out"));
  p.activation = nt.meta_at("activation") == "identity" ? Activation::identity
                                                        : Activation::relu;
  p.weight = nt.rows("w");
  p.bias = nt.vec("b");
  return p;
}

void save_moe(const MoEParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write file: " + path);
  out << "#in=" << p.in_dim << "\n#out=" << p.out_dim << "\n#experts="
      << p.num_experts() << "\n#dropout=" << io::fmt_double(p.dropout) << "\n";
  for (size_t i = 0; i < p.num_experts(); ++i) {
    io::write_rows(out, "e" + std::to_string(i) + ".w", p.expert_w[i]);
    io::write_vec(out, "e" + std::to_string(i) + ".b", p.expert_b[i]);
  }
  io::write_rows(out, "g", p.gate);
}

MoEParams load_moe(const std::string& path) {
  auto nt = io::read_named_tensors(path);
  MoEParams p;
  p.in_dim = static_cast<size_t>(nt.meta_int("in"));
  p.out_dim = static_cast<size_t>(nt.meta_int("out"));
  p.dropout = std::stod(nt.meta_at("dropout"));
  size_t n = static_cast<size_t>(nt.meta_int("experts"));
  for (size_t i = 0; i < n; ++i) {
    p.expert_w.push_back(nt.rows("e" + std::to_string(i) + ".w"));
    p.expert_b.push_back(nt.vec("e" + std::to_string(i) + ".b"));
  }
  p.gate = nt.rows("g");
  return p;
}

}  // namespace mmpr
