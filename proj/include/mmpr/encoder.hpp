#pragma once

#include <string>
#include <vector>

#include "mmpr/retrieval.hpp"

namespace mmpr {

enum class Activation { relu, identity };

// Mean-aggregation graph convolution: per node, message = mean of self and
// neighbor reps; node output = act(W * message + b); graph output = mean
// over node outputs.
struct GNNParams {
  size_t in_dim = 0;   // 4d
  size_t out_dim = 0;  // d_g
  std::vector<Vec> weight;  // out_dim x in_dim
  Vec bias;
  Activation activation = Activation::relu;
};

GNNParams init_gnn(size_t in_dim, size_t out_dim, uint64_t seed);

struct MoEParams {
  size_t in_dim = 0;   // k_paths * d_g
  size_t out_dim = 0;  // LLM token-embedding width
  std::vector<std::vector<Vec>> expert_w;  // n x out_dim x in_dim
  std::vector<Vec> expert_b;               // n x out_dim
  std::vector<Vec> gate;                   // in_dim rows of n (x . W_g)
  double dropout = 0.0;

  size_t num_experts() const { return expert_w.size(); }
};

MoEParams init_moe(size_t in_dim, size_t out_dim, size_t n_experts,
                   uint64_t seed);

// Path nodes plus their 1-hop neighbors in the original graph, induced.
Subgraph retrieval_subgraph(const BipartiteGraph& g, const RetrievalPath& path);

Vec gnn_encode(const Subgraph& sub, const NodeReps& reps, const GNNParams& params);

// Concatenation in ascending path-length order, zero-padded to exactly k
// blocks.
Vec concat_paths(const std::vector<Vec>& encodings, size_t k, size_t d_g);

Vec softmax_gate(const Vec& x, const MoEParams& params);

// y = sum_i G(x)_i (W_i x + b_i); dropout applied to x only in training
// mode with a seeded mask.
Vec moe_forward(const Vec& x, const MoEParams& params, bool training = false,
                uint64_t dropout_seed = 0);

struct SoftPromptBundle {
  std::string user;
  std::string item;
  std::string hard_prompt;
  std::vector<std::vector<std::string>> paths;  // node ids per path
  Vec soft_prompt;
  std::string config_hash;
  uint64_t seed = 0;
  std::string version;
};

// Appends one line-delimited JSON record; returns records written (1).
size_t export_bundle(const SoftPromptBundle& bundle, std::ostream& out);

void save_gnn(const GNNParams& p, const std::string& path);
GNNParams load_gnn(const std::string& path);
void save_moe(const MoEParams& p, const std::string& path);
MoEParams load_moe(const std::string& path);

}  // namespace mmpr
