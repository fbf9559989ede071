#include <doctest.h>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "helpers.hpp"
#include "mmpr/encoder.hpp"

using namespace mmpr;

namespace {

NodeReps random_reps(const BipartiteGraph& g, std::mt19937_64& rng, size_t dim) {
  NodeReps reps;
  for (size_t i = 0; i < g.num_nodes(); ++i)
    reps.vectors.push_back(testutil::random_vec(rng, dim));
  reps.present.assign(g.num_nodes(), 1);
  return reps;
}

}  // namespace

TEST_CASE("gnn_encode matches a dense adjacency-matrix oracle") {
  std::mt19937_64 rng(3);
  auto g = BipartiteGraph::from_edges(testutil::random_edges(rng, 6, 7, 0.4));
  auto reps = random_reps(g, rng, 5);
  auto params = init_gnn(5, 4, 909);

  std::vector<int> all(g.num_nodes());
  for (size_t i = 0; i < all.size(); ++i) all[i] = (int)i;
  Subgraph sub = induced_subgraph(g, all);

  // Oracle: M = (A + I) row-normalized; per-node out = relu(W (M X) + b);
  // graph encoding = column mean.
  size_t n = g.num_nodes();
  std::vector<Vec> messages(n, Vec(5, 0.0));
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> row(n, 0.0);
    row[i] = 1.0;
    for (int m : g.neighbors((int)i)) row[m] = 1.0;
    double deg = 0.0;
    for (double x : row) deg += x;
    for (size_t j = 0; j < n; ++j)
      for (size_t c = 0; c < 5; ++c)
        messages[i][c] += row[j] / deg * reps.vectors[j][c];
  }
  Vec expect(4, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t r = 0; r < 4; ++r) {
      double y = params.bias[r];
      for (size_t c = 0; c < 5; ++c) y += params.weight[r][c] * messages[i][c];
      expect[r] += std::max(y, 0.0) / static_cast<double>(n);
    }
  }

  Vec got = gnn_encode(sub, reps, params);
  REQUIRE(got.size() == 4);
  for (size_t r = 0; r < 4; ++r)
    CHECK(got[r] == doctest::Approx(expect[r]).epsilon(1e-9));
}

TEST_CASE("gnn_encode is invariant to node relabeling") {
  std::mt19937_64 rng(13);
  auto edges = testutil::random_edges(rng, 5, 6, 0.4);
  auto params = init_gnn(4, 3, 7);

  auto encode_with_order = [&](std::vector<std::pair<std::string, std::string>> es,
                               std::mt19937_64& shuffle_rng) {
    std::shuffle(es.begin(), es.end(), shuffle_rng);
    auto g = BipartiteGraph::from_edges(es);
    // reps keyed by id so the permutation only changes indices
    NodeReps reps;
    reps.vectors.resize(g.num_nodes());
    reps.present.assign(g.num_nodes(), 1);
    for (size_t i = 0; i < g.num_nodes(); ++i) {
      std::mt19937_64 node_rng(mmpr::fnv1a(g.node((int)i).id));
      reps.vectors[i] = testutil::random_vec(node_rng, 4);
    }
    std::vector<int> all(g.num_nodes());
    for (size_t i = 0; i < all.size(); ++i) all[i] = (int)i;
    return gnn_encode(induced_subgraph(g, all), reps, params);
  };

  std::mt19937_64 base_rng(1);
  Vec reference = encode_with_order(edges, base_rng);
  for (int trial = 0; trial < 50; ++trial) {
    std::mt19937_64 trng(1000 + trial);
    Vec enc = encode_with_order(edges, trng);
    REQUIRE(enc.size() == reference.size());
    for (size_t i = 0; i < enc.size(); ++i)
      CHECK(enc[i] == doctest::Approx(reference[i]).epsilon(1e-9));
  }
}

TEST_CASE("retrieval_subgraph is path nodes plus 1-hop neighbors") {
  auto g = BipartiteGraph::from_edges(
      {{"u0", "a"}, {"u0", "b"}, {"u1", "a"}, {"u1", "c"}, {"u2", "c"}});
  int u0 = g.require(NodeKind::user, "u0");
  int a = g.require(NodeKind::item, "a");
  RetrievalPath p{{u0, a}, 0.0};
  auto sub = retrieval_subgraph(g, p);
  std::set<int> expect{u0, a, g.require(NodeKind::item, "b"),
                       g.require(NodeKind::user, "u1")};
  CHECK(std::set<int>(sub.nodes.begin(), sub.nodes.end()) == expect);
}

TEST_CASE("concat_paths pads with zeros and rejects overflow") {
  std::vector<Vec> enc{{1, 2}, {3, 4}};
  Vec out = concat_paths(enc, 3, 2);
  CHECK(out == Vec{1, 2, 3, 4, 0, 0});
  CHECK_THROWS_AS(concat_paths(enc, 1, 2), Error);
  CHECK_THROWS_AS(concat_paths({{1, 2, 3}}, 2, 2), Error);
  CHECK(concat_paths({}, 2, 3) == Vec(6, 0.0));
}

TEST_CASE("gate normalization and saturation") {
  std::mt19937_64 rng(21);
  auto moe = init_moe(6, 4, 3, 5150);
  for (int t = 0; t < 1000; ++t) {
    Vec x = testutil::random_vec(rng, 6);
    Vec gate = softmax_gate(x, moe);
    REQUIRE(gate.size() == 3);
    double sum = 0.0;
    for (double gi : gate) {
      CHECK(gi >= 0.0);
      sum += gi;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  // Saturated gate reproduces the single expert.
  Vec x = testutil::random_vec(rng, 6);
  Vec base_gate = softmax_gate(x, moe);
  size_t winner =
      std::max_element(base_gate.begin(), base_gate.end()) - base_gate.begin();
  MoEParams hot = moe;
  for (size_t j = 0; j < hot.in_dim; ++j)
    for (size_t i = 0; i < hot.num_experts(); ++i) hot.gate[j][i] *= 1000.0;
  Vec y = moe_forward(x, hot);
  for (size_t r = 0; r < hot.out_dim; ++r) {
    double expert = hot.expert_b[winner][r];
    for (size_t c = 0; c < hot.in_dim; ++c)
      expert += hot.expert_w[winner][r][c] * x[c];
    CHECK(y[r] == doctest::Approx(expert).epsilon(1e-9));
  }
}

TEST_CASE("moe_forward matches the direct formula and stays in the convex hull") {
  std::mt19937_64 rng(33);
  auto moe = init_moe(5, 3, 4, 61);
  for (int t = 0; t < 50; ++t) {
    Vec x = testutil::random_vec(rng, 5);
    Vec gate = softmax_gate(x, moe);
    Vec expect(3, 0.0);
    std::vector<Vec> experts;
    for (size_t i = 0; i < 4; ++i) {
      Vec e(3, 0.0);
      for (size_t r = 0; r < 3; ++r) {
        e[r] = moe.expert_b[i][r];
        for (size_t c = 0; c < 5; ++c) e[r] += moe.expert_w[i][r][c] * x[c];
        expect[r] += gate[i] * e[r];
      }
      experts.push_back(e);
    }
    Vec y = moe_forward(x, moe);
    for (size_t r = 0; r < 3; ++r) {
      CHECK(y[r] == doctest::Approx(expect[r]).epsilon(1e-9));
      double lo = experts[0][r], hi = experts[0][r];
      for (const auto& e : experts) {
        lo = std::min(lo, e[r]);
        hi = std::max(hi, e[r]);
      }
      CHECK(y[r] >= lo - 1e-9);  // coordinate-wise convex hull
      CHECK(y[r] <= hi + 1e-9);
    }
  }
}

TEST_CASE("moe dropout is inference-transparent and seed-deterministic") {
  std::mt19937_64 rng(44);
  auto moe = init_moe(8, 3, 2, 70);
  moe.dropout = 0.5;
  Vec x = testutil::random_vec(rng, 8);

  MoEParams no_drop = moe;
  no_drop.dropout = 0.0;
  CHECK(moe_forward(x, moe, false) == moe_forward(x, no_drop, false));
  CHECK(moe_forward(x, no_drop, true, 5) == moe_forward(x, no_drop, false));

  Vec a = moe_forward(x, moe, true, 123);
  Vec b = moe_forward(x, moe, true, 123);
  Vec c = moe_forward(x, moe, true, 124);
  CHECK(a == b);
  CHECK(a != c);  // different mask with overwhelming probability
}

TEST_CASE("export_bundle emits a parseable JSONL record") {
  SoftPromptBundle bundle;
  bundle.user = "u1";
  bundle.item = "i1";
  bundle.hard_prompt = "prompt text";
  bundle.paths = {{"u:u1", "i:i1"}};
  bundle.soft_prompt = {0.5, -1.25};
  bundle.config_hash = "cafe";
  bundle.seed = 9;
  bundle.version = "1";
  std::ostringstream out;
  CHECK(export_bundle(bundle, out) == 1);
  std::string line = out.str();
  REQUIRE(!line.empty());
  CHECK(line.back() == '\n');
  auto rec = nlohmann::json::parse(line);
  CHECK(rec["user"] == "u1");
  CHECK(rec["item"] == "i1");
  CHECK(rec["prompt"] == "prompt text");
  CHECK(rec["paths"][0][1] == "i:i1");
  CHECK(rec["soft_prompt"][1] == -1.25);
  CHECK(rec["meta"]["config_hash"] == "cafe");
  CHECK(rec["meta"]["seed"] == 9);
  CHECK(rec["meta"]["version"] == "1");

  bundle.soft_prompt = {std::nan("")};
  std::ostringstream out2;
  CHECK_THROWS_AS(export_bundle(bundle, out2), Error);
}

TEST_CASE("gnn and moe parameters round-trip through disk") {
  testutil::TempDir dir("enc_io");
  auto gnn = init_gnn(5, 3, 42);
  save_gnn(gnn, dir.str("g.tsv"));
  auto g2 = load_gnn(dir.str("g.tsv"));
  CHECK(g2.weight == gnn.weight);
  CHECK(g2.bias == gnn.bias);
  CHECK(g2.activation == gnn.activation);

  auto moe = init_moe(4, 6, 3, 43);
  moe.dropout = 0.25;
  save_moe(moe, dir.str("m.tsv"));
  auto m2 = load_moe(dir.str("m.tsv"));
  CHECK(m2.expert_w == moe.expert_w);
  CHECK(m2.expert_b == moe.expert_b);
  CHECK(m2.gate == moe.gate);
  CHECK(m2.dropout == moe.dropout);
  CHECK(m2.num_experts() == moe.num_experts());
}
