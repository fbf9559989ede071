#include "mmpr.h"

#include <string>

#include "mmpr/pipeline.hpp"

using mmpr::Config;
using mmpr::Error;
using mmpr::ErrorCode;

struct mmpr_config {
  Config cfg;
  std::string last_get;  // backing storage for mmpr_config_get
};

struct mmpr_engine {
  Config cfg;
};

struct mmpr_result {
  mmpr::PairResult res;
};

namespace {

thread_local std::string t_last_error;

mmpr_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io:
      return MMPR_ERR_IO;
    case ErrorCode::MalformedLine:
    case ErrorCode::MalformedRecord:
    case ErrorCode::MissingField:
      return MMPR_ERR_PARSE;
    case ErrorCode::DimMismatch:
    case ErrorCode::DuplicateId:
    case ErrorCode::NegativeTimestamp:
    case ErrorCode::EmptyInput:
    case ErrorCode::BatchTooSmall:
    case ErrorCode::EmptySequence:
    case ErrorCode::TooManyPaths:
    case ErrorCode::InvalidConfig:
      return MMPR_ERR_INVALID_ARG;
    case ErrorCode::UnknownItem:
    case ErrorCode::UnknownNode:
    case ErrorCode::MissingModality:
    case ErrorCode::MissingRepresentation:
    case ErrorCode::MissingProfile:
    case ErrorCode::MissingTitle:
      return MMPR_ERR_NOT_FOUND;
    case ErrorCode::NotFitted:
    case ErrorCode::StageFailed:
      return MMPR_ERR_STATE;
    case ErrorCode::NonFiniteValue:
    case ErrorCode::NonFiniteLoss:
      return MMPR_ERR_NUMERIC;
  }
  return MMPR_ERR_INTERNAL;
}

template <typename Fn>
mmpr_status guard(Fn&& fn) {
  try {
    fn();
    t_last_error.clear();
    return MMPR_OK;
  } catch (const Error& e) {
    t_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return MMPR_ERR_INTERNAL;
  } catch (...) {
    t_last_error = "unknown error";
    return MMPR_ERR_INTERNAL;
  }
}

mmpr_status invalid(const char* msg) {
  t_last_error = msg;
  return MMPR_ERR_INVALID_ARG;
}

mmpr_status run_one(mmpr_engine* eng, int* skipped,
                    mmpr::StageResult (*stage)(const Config&)) {
  if (!eng) return invalid("null engine");
  return guard([&] {
    mmpr::StageResult r = stage(eng->cfg);
    if (skipped) *skipped = r.skipped ? 1 : 0;
  });
}

}  // namespace

extern "C" {

const char* mmpr_version(void) { return mmpr::kSchemaVersion; }

const char* mmpr_last_error(void) { return t_last_error.c_str(); }

mmpr_status mmpr_config_create(mmpr_config** out) {
  if (!out) return invalid("null output pointer");
  return guard([&] { *out = new mmpr_config(); });
}

mmpr_status mmpr_config_load_file(mmpr_config* cfg, const char* path) {
  if (!cfg || !path) return invalid("null argument");
  return guard([&] { cfg->cfg.load_file(path); });
}

mmpr_status mmpr_config_apply_env(mmpr_config* cfg) {
  if (!cfg) return invalid("null config");
  return guard([&] { cfg->cfg.apply_env(); });
}

mmpr_status mmpr_config_set(mmpr_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return invalid("null argument");
  return guard([&] { cfg->cfg.set(key, value); });
}

const char* mmpr_config_get(mmpr_config* cfg, const char* key) {
  if (!cfg || !key || !cfg->cfg.has(key)) return nullptr;
  cfg->last_get = cfg->cfg.get(key);
  return cfg->last_get.c_str();
}

void mmpr_config_destroy(mmpr_config* cfg) { delete cfg; }

mmpr_status mmpr_engine_create(const mmpr_config* cfg, mmpr_engine** out) {
  if (!cfg || !out) return invalid("null argument");
  return guard([&] { *out = new mmpr_engine{cfg->cfg}; });
}

void mmpr_engine_destroy(mmpr_engine* eng) { delete eng; }

mmpr_status mmpr_stage_ingest(mmpr_engine* eng, int* skipped) {
  return run_one(eng, skipped, mmpr::stage_ingest);
}
mmpr_status mmpr_stage_fit_codebooks(mmpr_engine* eng, int* skipped) {
  return run_one(eng, skipped, mmpr::stage_fit_codebooks);
}
mmpr_status mmpr_stage_quantize(mmpr_engine* eng, int* skipped) {
  return run_one(eng, skipped, mmpr::stage_quantize);
}
mmpr_status mmpr_stage_train_user_rep(mmpr_engine* eng, int* skipped) {
  return run_one(eng, skipped, mmpr::stage_train_user_rep);
}
mmpr_status mmpr_stage_build_graph(mmpr_engine* eng, int* skipped) {
  return run_one(eng, skipped, mmpr::stage_build_graph);
}
mmpr_status mmpr_stage_retrieve(mmpr_engine* eng, int* skipped) {
  return run_one(eng, skipped, mmpr::stage_retrieve);
}
mmpr_status mmpr_stage_encode(mmpr_engine* eng, int* skipped) {
  return run_one(eng, skipped, mmpr::stage_encode);
}
mmpr_status mmpr_stage_export(mmpr_engine* eng, int* skipped) {
  return run_one(eng, skipped, mmpr::stage_export);
}

mmpr_status mmpr_run_pipeline(mmpr_engine* eng) {
  if (!eng) return invalid("null engine");
  return guard([&] { mmpr::run_pipeline(eng->cfg); });
}

mmpr_status mmpr_bench(mmpr_engine* eng, size_t n_queries,
                       const char* report_path) {
  if (!eng || !report_path) return invalid("null argument");
  return guard([&] { mmpr::bench_retrieval(eng->cfg, n_queries, report_path); });
}

mmpr_status mmpr_retrieve_pair(mmpr_engine* eng, const char* user,
                               const char* item, int emit_prompt,
                               mmpr_result** out) {
  if (!eng || !user || !item || !out) return invalid("null argument");
  return guard([&] {
    auto res = mmpr::retrieve_pair(eng->cfg, user, item, emit_prompt != 0);
    *out = new mmpr_result{std::move(res)};
  });
}

size_t mmpr_result_path_count(const mmpr_result* res) {
  return res ? res->res.path_ids.size() : 0;
}

size_t mmpr_result_path_hops(const mmpr_result* res, size_t path) {
  if (!res || path >= res->res.path_ids.size()) return 0;
  return res->res.path_ids[path].size();
}

const char* mmpr_result_path_node(const mmpr_result* res, size_t path,
                                  size_t node) {
  if (!res || path >= res->res.path_ids.size()) return nullptr;
  const auto& nodes = res->res.path_ids[path];
  if (node >= nodes.size()) return nullptr;
  return nodes[node].c_str();
}

double mmpr_result_path_length(const mmpr_result* res, size_t path) {
  if (!res || path >= res->res.lengths.size()) return 0.0;
  return res->res.lengths[path];
}

const char* mmpr_result_prompt(const mmpr_result* res) {
  return res ? res->res.prompt.c_str() : nullptr;
}

void mmpr_result_destroy(mmpr_result* res) { delete res; }

}  // extern "C"
