// Command-line front end; talks to the engine through the C API only.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmpr.h"

namespace {

struct ConfigDeleter {
  void operator()(mmpr_config* c) const { mmpr_config_destroy(c); }
};
struct EngineDeleter {
  void operator()(mmpr_engine* e) const { mmpr_engine_destroy(e); }
};
struct ResultDeleter {
  void operator()(mmpr_result* r) const { mmpr_result_destroy(r); }
};

int fail(mmpr_status st) {
  std::fprintf(stderr, "error: %s\n", mmpr_last_error());
  return static_cast<int>(st);
}

struct CommonOpts {
  std::string config_file;
  std::string workdir;
  std::vector<std::string> sets;  // key=value overrides
};

void add_common(CLI::App* app, CommonOpts& opts) {
  app->add_option("--config", opts.config_file, "config file (key=value lines)");
  app->add_option("--workdir", opts.workdir, "working directory for artifacts");
  app->add_option("--set", opts.sets, "config override key=value (repeatable)");
}

mmpr_status build_config(const CommonOpts& opts, mmpr_config** out) {
  mmpr_status st = mmpr_config_create(out);
  if (st != MMPR_OK) return st;
  mmpr_config* cfg = *out;
  if (!opts.config_file.empty()) {
    st = mmpr_config_load_file(cfg, opts.config_file.c_str());
    if (st != MMPR_OK) return st;
  }
  st = mmpr_config_apply_env(cfg);
  if (st != MMPR_OK) return st;
  if (!opts.workdir.empty()) {
    st = mmpr_config_set(cfg, "workdir", opts.workdir.c_str());
    if (st != MMPR_OK) return st;
  }
  for (const auto& kv : opts.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n",
                   kv.c_str());
      return MMPR_ERR_INVALID_ARG;
    }
    st = mmpr_config_set(cfg, kv.substr(0, eq).c_str(),
                         kv.substr(eq + 1).c_str());
    if (st != MMPR_OK) return st;
  }
  return MMPR_OK;
}

using StageFn = mmpr_status (*)(mmpr_engine*, int*);

int run_stage(const CommonOpts& opts, StageFn stage, const char* name) {
  mmpr_config* raw_cfg = nullptr;
  mmpr_status st = build_config(opts, &raw_cfg);
  std::unique_ptr<mmpr_config, ConfigDeleter> cfg(raw_cfg);
  if (st != MMPR_OK) return fail(st);

  mmpr_engine* raw_eng = nullptr;
  st = mmpr_engine_create(cfg.get(), &raw_eng);
  std::unique_ptr<mmpr_engine, EngineDeleter> eng(raw_eng);
  if (st != MMPR_OK) return fail(st);

  int skipped = 0;
  st = stage(eng.get(), &skipped);
  if (st != MMPR_OK) return fail(st);
  std::printf("%s: %s\n", name, skipped ? "up to date" : "done");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmpr: multimodal path-based retrieval engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", []() { return std::string(mmpr_version()); });

  struct StageCmd {
    const char* name;
    const char* help;
    StageFn fn;
  };
  const StageCmd stages[] = {
      {"ingest", "validate and normalize raw inputs", mmpr_stage_ingest},
      {"fit-codebooks", "fit projections and residual codebooks",
       mmpr_stage_fit_codebooks},
      {"quantize", "assign semantic ids to all items", mmpr_stage_quantize},
      {"train-user-rep", "train the user sequence encoder",
       mmpr_stage_train_user_rep},
      {"build-graph", "build the user-item interaction graph",
       mmpr_stage_build_graph},
      {"retrieve", "retrieve top-k paths for the configured pairs",
       mmpr_stage_retrieve},
      {"encode", "encode retrieved paths into soft prompts", mmpr_stage_encode},
      {"export", "export the fine-tuning bundle", mmpr_stage_export},
  };

  std::vector<CommonOpts> stage_opts(std::size(stages));
  for (size_t i = 0; i < std::size(stages); ++i) {
    CLI::App* sub = app.add_subcommand(stages[i].name, stages[i].help);
    add_common(sub, stage_opts[i]);
  }

  CommonOpts run_opts;
  CLI::App* run_cmd = app.add_subcommand("run", "run the full pipeline");
  add_common(run_cmd, run_opts);

  CommonOpts bench_opts;
  size_t bench_queries = 1000;
  std::string bench_report = "bench.csv";
  CLI::App* bench_cmd =
      app.add_subcommand("bench", "time retrieval over random query pairs");
  add_common(bench_cmd, bench_opts);
  bench_cmd->add_option("--queries", bench_queries, "number of queries");
  bench_cmd->add_option("--report", bench_report, "per-query CSV output path");

  CommonOpts query_opts;
  std::string q_user, q_item;
  bool q_prompt = false;
  CLI::App* query_cmd =
      app.add_subcommand("query", "retrieve paths for one user-item pair");
  add_common(query_cmd, query_opts);
  query_cmd->add_option("--user", q_user, "user id")->required();
  query_cmd->add_option("--item", q_item, "item id")->required();
  query_cmd->add_flag("--prompt", q_prompt, "also print the rendered prompt");

  CLI11_PARSE(app, argc, argv);

  for (size_t i = 0; i < std::size(stages); ++i) {
    if (app.got_subcommand(stages[i].name))
      return run_stage(stage_opts[i], stages[i].fn, stages[i].name);
  }

  if (app.got_subcommand(run_cmd)) {
    mmpr_config* raw_cfg = nullptr;
    mmpr_status st = build_config(run_opts, &raw_cfg);
    std::unique_ptr<mmpr_config, ConfigDeleter> cfg(raw_cfg);
    if (st != MMPR_OK) return fail(st);
    mmpr_engine* raw_eng = nullptr;
    st = mmpr_engine_create(cfg.get(), &raw_eng);
    std::unique_ptr<mmpr_engine, EngineDeleter> eng(raw_eng);
    if (st != MMPR_OK) return fail(st);
    st = mmpr_run_pipeline(eng.get());
    if (st != MMPR_OK) return fail(st);
    std::printf("pipeline: done\n");
    return 0;
  }

  if (app.got_subcommand(bench_cmd)) {
    mmpr_config* raw_cfg = nullptr;
    mmpr_status st = build_config(bench_opts, &raw_cfg);
    std::unique_ptr<mmpr_config, ConfigDeleter> cfg(raw_cfg);
    if (st != MMPR_OK) return fail(st);
    mmpr_engine* raw_eng = nullptr;
    st = mmpr_engine_create(cfg.get(), &raw_eng);
    std::unique_ptr<mmpr_engine, EngineDeleter> eng(raw_eng);
    if (st != MMPR_OK) return fail(st);
    st = mmpr_bench(eng.get(), bench_queries, bench_report.c_str());
    if (st != MMPR_OK) return fail(st);
    std::printf("bench: report written to %s\n", bench_report.c_str());
    return 0;
  }

  if (app.got_subcommand(query_cmd)) {
    mmpr_config* raw_cfg = nullptr;
    mmpr_status st = build_config(query_opts, &raw_cfg);
    std::unique_ptr<mmpr_config, ConfigDeleter> cfg(raw_cfg);
    if (st != MMPR_OK) return fail(st);
    mmpr_engine* raw_eng = nullptr;
    st = mmpr_engine_create(cfg.get(), &raw_eng);
    std::unique_ptr<mmpr_engine, EngineDeleter> eng(raw_eng);
    if (st != MMPR_OK) return fail(st);
    mmpr_result* raw_res = nullptr;
    st = mmpr_retrieve_pair(eng.get(), q_user.c_str(), q_item.c_str(),
                            q_prompt ? 1 : 0, &raw_res);
    std::unique_ptr<mmpr_result, ResultDeleter> res(raw_res);
    if (st != MMPR_OK) return fail(st);
    size_t n = mmpr_result_path_count(res.get());
    for (size_t p = 0; p < n; ++p) {
      std::printf("path %zu (length %.6f):", p + 1,
                  mmpr_result_path_length(res.get(), p));
      size_t hops = mmpr_result_path_hops(res.get(), p);
      for (size_t h = 0; h < hops; ++h)
        std::printf(" %s", mmpr_result_path_node(res.get(), p, h));
      std::printf("\n");
    }
    if (n == 0) std::printf("no paths found\n");
    if (q_prompt) std::printf("%s\n", mmpr_result_prompt(res.get()));
    return 0;
  }

  return 0;
}
