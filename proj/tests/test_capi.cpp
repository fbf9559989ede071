#include <doctest.h>

#include <cstring>
#include <string>

#include "helpers.hpp"
#include "mmpr.h"

using testutil::TempDir;

namespace {

void set_or_die(mmpr_config* cfg, const char* k, const std::string& v) {
  REQUIRE(mmpr_config_set(cfg, k, v.c_str()) == MMPR_OK);
}

}  // namespace

TEST_CASE("c api: version and config surface") {
  CHECK(std::strlen(mmpr_version()) > 0);

  mmpr_config* cfg = nullptr;
  REQUIRE(mmpr_config_create(&cfg) == MMPR_OK);
  CHECK(std::string(mmpr_config_get(cfg, "l_hop")) == "3");
  CHECK(mmpr_config_get(cfg, "no_such_key") == nullptr);
  CHECK(mmpr_config_set(cfg, "l_hop", "4") == MMPR_OK);
  CHECK(std::string(mmpr_config_get(cfg, "l_hop")) == "4");

  CHECK(mmpr_config_load_file(cfg, "/no/such/file") == MMPR_ERR_IO);
  CHECK(std::strlen(mmpr_last_error()) > 0);

  CHECK(mmpr_config_create(nullptr) == MMPR_ERR_INVALID_ARG);
  CHECK(mmpr_config_set(nullptr, "a", "b") == MMPR_ERR_INVALID_ARG);
  mmpr_config_destroy(cfg);
  mmpr_config_destroy(nullptr);  // tolerated
}

TEST_CASE("c api: pipeline, stages, retrieval, errors") {
  TempDir dir("capi");
  auto ds = testutil::write_synth(dir, 16, 20, 5, 2718);

  mmpr_config* cfg = nullptr;
  REQUIRE(mmpr_config_create(&cfg) == MMPR_OK);
  set_or_die(cfg, "workdir", dir.str("work"));
  set_or_die(cfg, "embeddings_text", ds.emb_text);
  set_or_die(cfg, "embeddings_visual", ds.emb_visual);
  set_or_die(cfg, "interactions", ds.interactions);
  set_or_die(cfg, "profiles", ds.profiles);
  set_or_die(cfg, "pairs", ds.pairs);
  set_or_die(cfg, "codebook_layers", "2");
  set_or_die(cfg, "codebook_size", "8");
  set_or_die(cfg, "latent_dim", "4");
  set_or_die(cfg, "rq_epochs", "2");
  set_or_die(cfg, "seq_epochs", "2");
  set_or_die(cfg, "negatives", "4");
  set_or_die(cfg, "gnn_dim", "4");
  set_or_die(cfg, "soft_prompt_dim", "8");
  set_or_die(cfg, "moe_experts", "2");

  mmpr_engine* eng = nullptr;
  REQUIRE(mmpr_engine_create(cfg, &eng) == MMPR_OK);
  REQUIRE(mmpr_run_pipeline(eng) == MMPR_OK);

  // Stage reruns report skipped.
  int skipped = 0;
  CHECK(mmpr_stage_ingest(eng, &skipped) == MMPR_OK);
  CHECK(skipped == 1);
  CHECK(mmpr_stage_export(eng, &skipped) == MMPR_OK);
  CHECK(skipped == 1);
  CHECK(mmpr_stage_retrieve(eng, nullptr) == MMPR_OK);  // skipped is optional

  // Single-pair retrieval with prompt.
  std::string user = ds.users.front();
  // find one of the user's items from the pairs file line 1
  std::string line = testutil::slurp(ds.pairs);
  auto tab = line.find('\t');
  auto nl = line.find('\n');
  std::string item = line.substr(tab + 1, nl - tab - 1);
  std::string u0 = line.substr(0, tab);

  mmpr_result* res = nullptr;
  REQUIRE(mmpr_retrieve_pair(eng, u0.c_str(), item.c_str(), 1, &res) == MMPR_OK);
  size_t n = mmpr_result_path_count(res);
  for (size_t p = 0; p < n; ++p) {
    size_t hops = mmpr_result_path_hops(res, p);
    REQUIRE(hops >= 2);
    std::string first = mmpr_result_path_node(res, p, 0);
    std::string last = mmpr_result_path_node(res, p, hops - 1);
    CHECK(first == "u:" + u0);
    CHECK(last == "i:" + item);
    CHECK(mmpr_result_path_length(res, p) >= 0.0);
  }
  CHECK(mmpr_result_path_node(res, 0, 999) == nullptr);
  CHECK(mmpr_result_path_node(res, 999, 0) == nullptr);
  const char* prompt = mmpr_result_prompt(res);
  REQUIRE(prompt != nullptr);
  CHECK(std::string(prompt).find("Explanations:") != std::string::npos);
  mmpr_result_destroy(res);

  // Unknown user maps to NOT_FOUND with a message.
  mmpr_result* res2 = nullptr;
  CHECK(mmpr_retrieve_pair(eng, "ghost", item.c_str(), 0, &res2) ==
        MMPR_ERR_NOT_FOUND);
  CHECK(std::string(mmpr_last_error()).find("ghost") != std::string::npos);

  // Bench through the C API.
  CHECK(mmpr_bench(eng, 5, dir.str("bench.csv").c_str()) == MMPR_OK);

  mmpr_engine_destroy(eng);
  mmpr_config_destroy(cfg);
}
