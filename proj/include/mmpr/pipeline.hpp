#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmpr/encoder.hpp"

namespace mmpr {

// Layered key-value configuration: built-in defaults, then config file,
// then MMPR_* environment variables, then explicit flag overrides.
class Config {
 public:
  Config();

  void load_file(const std::string& path);
  void apply_env();
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string hash() const;

  static const std::map<std::string, std::string>& defaults();

 private:
  std::map<std::string, std::string> values_;
};

struct StageResult {
  std::string stage;
  bool skipped = false;  // manifest hash match, outputs already present
};

// Pipeline stages. Each writes its outputs plus a manifest with input
// hashes under <workdir>/manifests; reruns with unchanged inputs are no-ops.
StageResult stage_ingest(const Config& cfg);
StageResult stage_fit_codebooks(const Config& cfg);
StageResult stage_quantize(const Config& cfg);
StageResult stage_train_user_rep(const Config& cfg);
StageResult stage_build_graph(const Config& cfg);
StageResult stage_retrieve(const Config& cfg);
StageResult stage_encode(const Config& cfg);
StageResult stage_export(const Config& cfg);

// ingest -> fit-codebooks -> quantize -> train-user-rep -> build-graph ->
// retrieve -> encode -> export.
std::vector<StageResult> run_pipeline(const Config& cfg);

struct BenchReport {
  size_t queries = 0;
  double total_seconds = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double queries_per_second = 0.0;
};

// Times `retrieve` over seeded random query pairs; per-query CSV rows go to
// report_path, the summary to <report_path>.summary.csv.
BenchReport bench_retrieval(const Config& cfg, size_t n_queries,
                            const std::string& report_path);

// Single-pair retrieval against the on-disk artifacts of a finished run.
struct PairResult {
  std::vector<RetrievalPath> paths;
  std::vector<std::vector<std::string>> path_ids;
  std::vector<double> lengths;
  std::string prompt;  // filled when requested
};

PairResult retrieve_pair(const Config& cfg, const std::string& user,
                         const std::string& item, bool emit_prompt);

extern const char* kSchemaVersion;

}  // namespace mmpr
