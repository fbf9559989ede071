#include "mmpr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mmpr {

const char* kSchemaVersion = "1";

// ---------------------------------------------------------------------------
// Config

const std::map<std::string, std::string>& Config::defaults() {
  static const std::map<std::string, std::string> kDefaults = {
      {"workdir", "out"},
      {"embeddings_text", ""},
      {"embeddings_visual", ""},
      {"interactions", ""},
      {"profiles", ""},
      {"pairs", ""},
      {"l_hop", "3"},
      {"k_core", "2"},
      {"k_paths", "3"},
      {"codebook_layers", "4"},
      {"codebook_size", "256"},
      {"latent_dim", "64"},
      {"seed", "42"},
      {"beta", "0.25"},
      {"tau", "0.07"},
      {"rq_epochs", "20"},
      {"rq_lr", "0.001"},
      {"rq_refit_every", "5"},
      {"rq_holdout_frac", "0.1"},
      {"seq_epochs", "30"},
      {"seq_lr", "0.05"},
      {"negatives", "32"},
      {"temperature", "1"},
      {"gnn_dim", "64"},
      {"moe_experts", "4"},
      {"soft_prompt_dim", "2048"},
      {"dropout", "0"},
      {"user_arc_against_item", "false"},
      {"remove_target_edge", "true"},
      {"parallelism", "1"},
  };
  return kDefaults;
}

Config::Config() : values_(defaults()) {}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config file: " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::InvalidConfig,
                  path + ": expected key=value at line " + std::to_string(lineno));
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void Config::apply_env() {
  for (const auto& [key, _] : defaults()) {
    std::string env = "MMPR_";
    for (char c : key) env += static_cast<char>(std::toupper(c));
    if (const char* v = std::getenv(env.c_str())) values_[key] = v;
  }
}

void Config::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

std::string Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw Error(ErrorCode::InvalidConfig, "unknown config key: " + key);
  return it->second;
}

std::string Config::get_or(const std::string& key, const std::string& fb) const {
  auto it = values_.find(key);
  return it == values_.end() || it->second.empty() ? fb : it->second;
}

int64_t Config::get_int(const std::string& key) const {
  try {
    return std::stoll(get(key));
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "config key " + key + " is not an integer");
  }
}

double Config::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "config key " + key + " is not a number");
  }
}

bool Config::get_bool(const std::string& key) const {
  std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::InvalidConfig, "config key " + key + " is not a boolean");
}

std::string Config::hash() const {
  std::string blob;
  for (const auto& [k, v] : values_) blob += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(blob)));
  return buf;
}

// ---------------------------------------------------------------------------
// Stage plumbing

namespace {

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open input: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(ss.str())));
  return buf;
}

struct StagePaths {
  fs::path work;
  fs::path store;
  fs::path codebooks;
  fs::path sids;
  fs::path userrep;
  fs::path graph;
  fs::path retrieval;
  fs::path encode;
  fs::path exported;
  fs::path manifests;
};

StagePaths layout(const Config& cfg) {
  fs::path w = cfg.get("workdir");
  return StagePaths{w,          w / "store",     w / "codebooks",
                    w / "sids", w / "userrep",   w / "graph",
                    w / "retrieval", w / "encode", w / "export",
                    w / "manifests"};
}

// Declarative stage contract: skip when input hashes, relevant config keys,
// and outputs all match the recorded manifest.
struct StageSpec {
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> config_keys;
  std::vector<std::string> outputs;
};

bool manifest_matches(const StageSpec& spec, const Config& cfg,
                      const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) return false;
  json m = json::parse(in, nullptr, false);
  if (m.is_discarded()) return false;
  if (m.value("version", "") != kSchemaVersion) return false;
  for (const auto& input : spec.inputs) {
    if (!fs::exists(input)) return false;
    if (m["inputs"].value(input, "") != file_hash(input)) return false;
  }
  for (const auto& key : spec.config_keys)
    if (m["config"].value(key, "") != cfg.get(key)) return false;
  for (const auto& output : spec.outputs)
    if (!fs::exists(output)) return false;
  return true;
}

void write_manifest(const StageSpec& spec, const Config& cfg,
                    const fs::path& manifest_path) {
  json m;
  m["stage"] = spec.name;
  m["version"] = kSchemaVersion;
  for (const auto& input : spec.inputs) m["inputs"][input] = file_hash(input);
  for (const auto& key : spec.config_keys) m["config"][key] = cfg.get(key);
  m["outputs"] = spec.outputs;
  std::ofstream out(manifest_path);
  out << m.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest: " + manifest_path.string());
}

// Runs the stage body unless the manifest says it is already done; the
// manifest is written only after the body succeeds, so partial artifacts are
// never marked complete.
template <typename Body>
StageResult run_stage(const StageSpec& spec, const Config& cfg, Body&& body) {
  StagePaths sp = layout(cfg);
  fs::create_directories(sp.manifests);
  fs::path manifest_path = sp.manifests / (spec.name + ".json");
  if (manifest_matches(spec, cfg, manifest_path))
    return StageResult{spec.name, true};
  try {
    body();
  } catch (const Error& e) {
    throw Error(e.code(), "[stage " + spec.name + "] " + e.what());
  }
  write_manifest(spec, cfg, manifest_path);
  return StageResult{spec.name, false};
}

std::string require_input(const Config& cfg, const std::string& key) {
  std::string path = cfg.get(key);
  if (path.empty())
    throw Error(ErrorCode::InvalidConfig, "config key " + key + " not set");
  if (!fs::exists(path))
    throw Error(ErrorCode::Io, "input file not found: " + path + " (" + key + ")");
  return path;
}

std::string node_tag(const BipartiteGraph& g, int idx) {
  const NodeRef& n = g.node(idx);
  return (n.kind == NodeKind::user ? "u:" : "i:") + n.id;
}

int parse_node_tag(const BipartiteGraph& g, const std::string& tag) {
  if (tag.size() < 2 || tag[1] != ':')
    throw Error(ErrorCode::MalformedRecord, "bad node tag: " + tag);
  NodeKind kind = tag[0] == 'u' ? NodeKind::user : NodeKind::item;
  return g.require(kind, tag.substr(2));
}

struct PairList {
  std::vector<std::pair<std::string, std::string>> pairs;
};

PairList load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open pairs file: " + path);
  PairList out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw Error(ErrorCode::MalformedLine,
                  path + ": malformed pair at line " + std::to_string(lineno));
    out.pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

RetrieveConfig retrieve_config(const Config& cfg) {
  RetrieveConfig rc;
  rc.l_hop = static_cast<size_t>(cfg.get_int("l_hop"));
  rc.k_core = static_cast<size_t>(cfg.get_int("k_core"));
  rc.k_paths = static_cast<size_t>(cfg.get_int("k_paths"));
  rc.remove_target_edge = cfg.get_bool("remove_target_edge");
  rc.weights.user_arc_against_item = cfg.get_bool("user_arc_against_item");
  if (rc.l_hop < 1 || rc.k_core < 1 || rc.k_paths < 1)
    throw Error(ErrorCode::InvalidConfig, "l_hop, k_core, k_paths must be >= 1");
  return rc;
}

std::map<std::string, Vec> load_reps_file(const std::string& path) {
  std::map<std::string, Vec> out;
  auto table = load_embeddings(path, Modality::text);
  for (auto& [id, v] : table.rows) out[id] = v;
  return out;
}

struct Runtime {
  BipartiteGraph graph;
  NodeReps reps;
};

Runtime load_runtime(const Config& cfg) {
  StagePaths sp = layout(cfg);
  Runtime rt;
  rt.graph = BipartiteGraph::load((sp.graph / "edges.tsv").string());
  auto user_reps = load_reps_file((sp.userrep / "user_reps.tsv").string());
  auto item_feats = load_reps_file((sp.userrep / "item_features.tsv").string());
  rt.reps = build_node_reps(rt.graph, user_reps, item_feats);
  return rt;
}

RqTrainOptions rq_options(const Config& cfg) {
  RqTrainOptions o;
  o.num_layers = static_cast<size_t>(cfg.get_int("codebook_layers"));
  o.codebook_size = static_cast<size_t>(cfg.get_int("codebook_size"));
  o.latent_dim = static_cast<size_t>(cfg.get_int("latent_dim"));
  o.epochs = static_cast<size_t>(cfg.get_int("rq_epochs"));
  o.lr = cfg.get_double("rq_lr");
  o.beta = cfg.get_double("beta");
  o.tau = cfg.get_double("tau");
  o.refit_every = static_cast<size_t>(cfg.get_int("rq_refit_every"));
  o.holdout_frac = cfg.get_double("rq_holdout_frac");
  o.seed = split_seed(static_cast<uint64_t>(cfg.get_int("seed")), "stage.fit-codebooks");
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

StageResult stage_ingest(const Config& cfg) {
  StagePaths sp = layout(cfg);
  StageSpec spec{"ingest",
                 {require_input(cfg, "embeddings_text"),
                  require_input(cfg, "embeddings_visual"),
                  require_input(cfg, "interactions"), require_input(cfg, "profiles")},
                 {},
                 {(sp.store / "embeddings_text.tsv").string(),
                  (sp.store / "embeddings_visual.tsv").string(),
                  (sp.store / "interactions.tsv").string(),
                  (sp.store / "profiles.jsonl").string(),
                  (sp.store / "manifest.json").string()}};
  return run_stage(spec, cfg, [&] {
    fs::create_directories(sp.store);
    auto text = load_embeddings(spec.inputs[0], Modality::text);
    auto visual = load_embeddings(spec.inputs[1], Modality::visual);
    auto log = load_interactions(spec.inputs[2]);
    auto profiles = load_profiles(spec.inputs[3]);
    save_embeddings(text, spec.outputs[0]);
    save_embeddings(visual, spec.outputs[1]);
    save_interactions(log, spec.outputs[2]);
    save_profiles(profiles, spec.outputs[3]);
    json m;
    m["text_dim"] = text.dim;
    m["visual_dim"] = visual.dim;
    m["text_items"] = text.rows.size();
    m["visual_items"] = visual.rows.size();
    m["interactions"] = log.entries.size();
    m["user_profiles"] = profiles.user_profiles.size();
    m["item_profiles"] = profiles.item_profiles.size();
    std::ofstream(spec.outputs[4]) << m.dump(2) << "\n";
  });
}

StageResult stage_fit_codebooks(const Config& cfg) {
  StagePaths sp = layout(cfg);
  StageSpec spec{"fit-codebooks",
                 {(sp.store / "embeddings_text.tsv").string(),
                  (sp.store / "embeddings_visual.tsv").string()},
                 {"codebook_layers", "codebook_size", "latent_dim", "seed", "beta",
                  "tau", "rq_epochs", "rq_lr", "rq_refit_every", "rq_holdout_frac"},
                 {(sp.codebooks / "codebooks_text.tsv").string(),
                  (sp.codebooks / "codebooks_visual.tsv").string(),
                  (sp.codebooks / "projection_text.tsv").string(),
                  (sp.codebooks / "projection_visual.tsv").string(),
                  (sp.codebooks / "train_report.json").string()}};
  return run_stage(spec, cfg, [&] {
    fs::create_directories(sp.codebooks);
    auto text = load_embeddings(spec.inputs[0], Modality::text);
    auto visual = load_embeddings(spec.inputs[1], Modality::visual);
    auto model = train_projection(text, visual, rq_options(cfg));
    save_codebooks(model.codebooks_text, spec.outputs[0]);
    save_codebooks(model.codebooks_visual, spec.outputs[1]);
    save_projection(model.projection_text, spec.outputs[2]);
    save_projection(model.projection_visual, spec.outputs[3]);
    json rep;
    rep["train_loss"] = model.report.train_loss;
    rep["holdout_loss"] = model.report.holdout_loss;
    std::ofstream(spec.outputs[4]) << rep.dump(2) << "\n";
  });
}

StageResult stage_quantize(const Config& cfg) {
  StagePaths sp = layout(cfg);
  StageSpec spec{"quantize",
                 {(sp.store / "embeddings_text.tsv").string(),
                  (sp.store / "embeddings_visual.tsv").string(),
                  (sp.codebooks / "codebooks_text.tsv").string(),
                  (sp.codebooks / "codebooks_visual.tsv").string(),
                  (sp.codebooks / "projection_text.tsv").string(),
                  (sp.codebooks / "projection_visual.tsv").string()},
                 {},
                 {(sp.sids / "sids_text.tsv").string(),
                  (sp.sids / "sids_visual.tsv").string()}};
  return run_stage(spec, cfg, [&] {
    fs::create_directories(sp.sids);
    for (int m = 0; m < 2; ++m) {
      Modality mod = m == 0 ? Modality::text : Modality::visual;
      auto table = load_embeddings(spec.inputs[m], mod);
      auto stack = load_codebooks(spec.inputs[2 + m], mod);
      auto proj = load_projection(spec.inputs[4 + m]);
      std::ofstream out(spec.outputs[m]);
      for (const auto& [id, e] : table.rows) {
        auto q = quantize(e, stack, proj);
        out << id << '\t';
        for (size_t i = 0; i < q.sid.indices.size(); ++i) {
          if (i) out << ',';
          out << q.sid.indices[i];
        }
        out << '\n';
      }
      if (!out) throw Error(ErrorCode::Io, "cannot write " + spec.outputs[m]);
    }
  });
}

StageResult stage_train_user_rep(const Config& cfg) {
  StagePaths sp = layout(cfg);
  StageSpec spec{"train-user-rep",
                 {(sp.store / "embeddings_text.tsv").string(),
                  (sp.store / "embeddings_visual.tsv").string(),
                  (sp.store / "interactions.tsv").string(),
                  (sp.codebooks / "codebooks_text.tsv").string(),
                  (sp.codebooks / "codebooks_visual.tsv").string(),
                  (sp.codebooks / "projection_text.tsv").string(),
                  (sp.codebooks / "projection_visual.tsv").string()},
                 {"seq_epochs", "seq_lr", "negatives", "temperature", "seed"},
                 {(sp.userrep / "seq_encoder.tsv").string(),
                  (sp.userrep / "projection_text.tsv").string(),
                  (sp.userrep / "projection_visual.tsv").string(),
                  (sp.userrep / "user_reps.tsv").string(),
                  (sp.userrep / "item_features.tsv").string(),
                  (sp.userrep / "train_report.json").string()}};
  return run_stage(spec, cfg, [&] {
    fs::create_directories(sp.userrep);
    auto text = load_embeddings(spec.inputs[0], Modality::text);
    auto visual = load_embeddings(spec.inputs[1], Modality::visual);
    auto log = load_interactions(spec.inputs[2]);
    auto ct = load_codebooks(spec.inputs[3], Modality::text);
    auto cv = load_codebooks(spec.inputs[4], Modality::visual);

    uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));
    SeqTrainState state;
    state.proj_text = load_projection(spec.inputs[5]);
    state.proj_visual = load_projection(spec.inputs[6]);
    size_t feat_dim = 4 * state.proj_text.out_dim;
    state.encoder = init_seq_encoder(feat_dim, split_seed(seed, "seq.encoder.init"));

    auto sequences = derive_sequences(log);
    SeqTrainOptions opts;
    opts.epochs = static_cast<size_t>(cfg.get_int("seq_epochs"));
    opts.lr = cfg.get_double("seq_lr");
    opts.negatives = static_cast<size_t>(cfg.get_int("negatives"));
    opts.temperature = cfg.get_double("temperature");
    opts.seed = seed;
    auto report = train_user_rep(state, sequences, text, visual, ct, cv, opts);

    save_seq_encoder(state.encoder, spec.outputs[0]);
    save_projection(state.proj_text, spec.outputs[1]);
    save_projection(state.proj_visual, spec.outputs[2]);

    EmbeddingTable feats;
    feats.dim = feat_dim;
    FeatureMap fmap;
    for (const auto& [id, _] : text.rows) {
      if (!visual.rows.count(id)) continue;
      auto f = item_feature(id, text, visual, ct, cv, state.proj_text,
                            state.proj_visual);
      fmap[id] = f.vector;
      feats.rows[id] = std::move(f.vector);
    }
    save_embeddings(feats, spec.outputs[4]);

    EmbeddingTable ureps;
    ureps.dim = feat_dim;
    for (const auto& seq : sequences)
      ureps.rows[seq.user] = encode_user(seq, fmap, state.encoder).vector;
    save_embeddings(ureps, spec.outputs[3]);

    json rep;
    rep["loss"] = report.loss;
    std::ofstream(spec.outputs[5]) << rep.dump(2) << "\n";
  });
}

StageResult stage_build_graph(const Config& cfg) {
  StagePaths sp = layout(cfg);
  StageSpec spec{"build-graph",
                 {(sp.store / "interactions.tsv").string()},
                 {},
                 {(sp.graph / "edges.tsv").string()}};
  return run_stage(spec, cfg, [&] {
    fs::create_directories(sp.graph);
    auto log = load_interactions(spec.inputs[0]);
    BipartiteGraph::build(log).save(spec.outputs[0]);
  });
}

StageResult stage_retrieve(const Config& cfg) {
  StagePaths sp = layout(cfg);
  StageSpec spec{"retrieve",
                 {require_input(cfg, "pairs"), (sp.graph / "edges.tsv").string(),
                  (sp.userrep / "user_reps.tsv").string(),
                  (sp.userrep / "item_features.tsv").string()},
                 {"l_hop", "k_core", "k_paths", "remove_target_edge",
                  "user_arc_against_item"},
                 {(sp.retrieval / "paths.jsonl").string()}};
  return run_stage(spec, cfg, [&] {
    fs::create_directories(sp.retrieval);
    Runtime rt = load_runtime(cfg);
    auto pairs = load_pairs(spec.inputs[0]).pairs;
    RetrieveConfig rc = retrieve_config(cfg);

    std::vector<std::vector<RetrievalPath>> results(pairs.size());
    std::vector<std::string> failures(pairs.size());
    size_t threads = std::max<int64_t>(1, cfg.get_int("parallelism"));
    auto worker = [&](size_t begin, size_t end) {
      for (size_t i = begin; i < end; ++i) {
        try {
          int u = rt.graph.require(NodeKind::user, pairs[i].first);
          int v = rt.graph.require(NodeKind::item, pairs[i].second);
          results[i] = retrieve(rt.graph, rt.reps, u, v, rc);
        } catch (const Error& e) {
          failures[i] = e.what();
        }
      }
    };
    if (threads <= 1 || pairs.size() < 2) {
      worker(0, pairs.size());
    } else {
      std::vector<std::thread> pool;
      size_t chunk = (pairs.size() + threads - 1) / threads;
      for (size_t t = 0; t < threads; ++t) {
        size_t b = t * chunk;
        if (b >= pairs.size()) break;
        pool.emplace_back(worker, b, std::min(b + chunk, pairs.size()));
      }
      for (auto& th : pool) th.join();
    }
    for (size_t i = 0; i < pairs.size(); ++i) {
      if (!failures[i].empty())
        throw Error(ErrorCode::StageFailed,
                    "pair (" + pairs[i].first + ", " + pairs[i].second + "): " +
                        failures[i]);
    }

    // Order-preserving write-back.
    std::ofstream out(spec.outputs[0]);
    for (size_t i = 0; i < pairs.size(); ++i) {
      json rec;
      rec["user"] = pairs[i].first;
      rec["item"] = pairs[i].second;
      json jpaths = json::array(), jlens = json::array();
      for (const auto& p : results[i]) {
        json jp = json::array();
        for (int n : p.nodes) jp.push_back(node_tag(rt.graph, n));
        jpaths.push_back(std::move(jp));
        jlens.push_back(p.length);
      }
      rec["paths"] = std::move(jpaths);
      rec["lengths"] = std::move(jlens);
      out << rec.dump() << '\n';
    }
    if (!out) throw Error(ErrorCode::Io, "cannot write " + spec.outputs[0]);
  });
}

StageResult stage_encode(const Config& cfg) {
  StagePaths sp = layout(cfg);
  StageSpec spec{"encode",
                 {(sp.retrieval / "paths.jsonl").string(),
                  (sp.graph / "edges.tsv").string(),
                  (sp.userrep / "user_reps.tsv").string(),
                  (sp.userrep / "item_features.tsv").string()},
                 {"gnn_dim", "moe_experts", "soft_prompt_dim", "k_paths", "seed",
                  "dropout"},
                 {(sp.encode / "gnn.tsv").string(), (sp.encode / "moe.tsv").string(),
                  (sp.encode / "soft_prompts.tsv").string()}};
  return run_stage(spec, cfg, [&] {
    fs::create_directories(sp.encode);
    Runtime rt = load_runtime(cfg);
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));
    size_t d_g = static_cast<size_t>(cfg.get_int("gnn_dim"));
    size_t k_paths = static_cast<size_t>(cfg.get_int("k_paths"));
    size_t d_out = static_cast<size_t>(cfg.get_int("soft_prompt_dim"));
    size_t feat_dim = 0;
    for (size_t i = 0; i < rt.graph.num_nodes(); ++i)
      if (rt.reps.has(static_cast<int>(i))) {
        feat_dim = rt.reps.at(static_cast<int>(i)).size();
        break;
      }

    // Weights are loadable from files; otherwise seeded defaults so an
    // external trainer can round-trip.
    GNNParams gnn;
    if (!cfg.get_or("gnn_weights", "").empty()) {
      gnn = load_gnn(cfg.get("gnn_weights"));
    } else {
      gnn = init_gnn(feat_dim, d_g, split_seed(seed, "encode.gnn"));
    }
    MoEParams moe;
    if (!cfg.get_or("moe_weights", "").empty()) {
      moe = load_moe(cfg.get("moe_weights"));
    } else {
      moe = init_moe(k_paths * d_g,
                     d_out, static_cast<size_t>(cfg.get_int("moe_experts")),
                     split_seed(seed, "encode.moe"));
      moe.dropout = cfg.get_double("dropout");
    }
    save_gnn(gnn, spec.outputs[0]);
    save_moe(moe, spec.outputs[1]);

    std::ifstream in(spec.inputs[0]);
    std::ofstream out(spec.outputs[2]);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line);
      std::vector<Vec> encodings;
      for (const auto& jp : rec["paths"]) {
        RetrievalPath p;
        for (const auto& tag : jp)
          p.nodes.push_back(parse_node_tag(rt.graph, tag.get<std::string>()));
        auto sub = retrieval_subgraph(rt.graph, p);
        encodings.push_back(gnn_encode(sub, rt.reps, gnn));
      }
      Vec x = concat_paths(encodings, k_paths, d_g);
      Vec s = moe_forward(x, moe);
      out << rec["user"].get<std::string>() << '\t'
          << rec["item"].get<std::string>() << '\t';
      for (size_t i = 0; i < s.size(); ++i) {
        if (i) out << ',';
        out << io::fmt_double(s[i]);
      }
      out << '\n';
    }
    if (!out) throw Error(ErrorCode::Io, "cannot write " + spec.outputs[2]);
  });
}

StageResult stage_export(const Config& cfg) {
  StagePaths sp = layout(cfg);
  StageSpec spec{"export",
                 {(sp.retrieval / "paths.jsonl").string(),
                  (sp.encode / "soft_prompts.tsv").string(),
                  (sp.store / "profiles.jsonl").string(),
                  (sp.graph / "edges.tsv").string()},
                 {"seed", "k_paths"},
                 {(sp.exported / "bundle.jsonl").string(),
                  (sp.exported / "manifest.json").string()}};
  return run_stage(spec, cfg, [&] {
    fs::create_directories(sp.exported);
    BipartiteGraph graph = BipartiteGraph::load(spec.inputs[3]);
    auto profiles = load_profiles(spec.inputs[2]);

    // Soft prompts keyed by (user, item), in file order matching paths.jsonl.
    std::ifstream sin(spec.inputs[1]);
    std::vector<Vec> soft;
    std::string line;
    while (std::getline(sin, line)) {
      if (line.empty()) continue;
      auto t1 = line.find('\t');
      auto t2 = line.find('\t', t1 + 1);
      Vec v;
      std::istringstream vs(line.substr(t2 + 1));
      std::string tok;
      while (std::getline(vs, tok, ',')) v.push_back(std::stod(tok));
      soft.push_back(std::move(v));
    }

    std::ifstream pin(spec.inputs[0]);
    std::ofstream out(spec.outputs[0]);
    size_t idx = 0;
    while (std::getline(pin, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line);
      std::string user = rec["user"], item = rec["item"];
      std::vector<RetrievalPath> paths;
      std::vector<std::vector<std::string>> path_ids;
      size_t li = 0;
      for (const auto& jp : rec["paths"]) {
        RetrievalPath p;
        std::vector<std::string> ids;
        for (const auto& tag : jp) {
          p.nodes.push_back(parse_node_tag(graph, tag.get<std::string>()));
          ids.push_back(tag.get<std::string>());
        }
        p.length = rec["lengths"][li++].get<double>();
        paths.push_back(std::move(p));
        path_ids.push_back(std::move(ids));
      }
      SoftPromptBundle bundle;
      bundle.user = user;
      bundle.item = item;
      bundle.hard_prompt = render_prompt(user, item, paths, graph, profiles);
      bundle.paths = std::move(path_ids);
      if (idx >= soft.size())
        throw Error(ErrorCode::StageFailed, "soft prompt missing for pair " + user);
      bundle.soft_prompt = soft[idx++];
      bundle.config_hash = cfg.hash();
      bundle.seed = static_cast<uint64_t>(cfg.get_int("seed"));
      bundle.version = kSchemaVersion;
      export_bundle(bundle, out);
    }
    json m;
    m["schema_version"] = kSchemaVersion;
    m["records"] = idx;
    m["config_hash"] = cfg.hash();
    std::ofstream(spec.outputs[1]) << m.dump(2) << "\n";
  });
}

std::vector<StageResult> run_pipeline(const Config& cfg) {
  std::vector<StageResult> results;
  results.push_back(stage_ingest(cfg));
  results.push_back(stage_fit_codebooks(cfg));
  results.push_back(stage_quantize(cfg));
  results.push_back(stage_train_user_rep(cfg));
  results.push_back(stage_build_graph(cfg));
  results.push_back(stage_retrieve(cfg));
  results.push_back(stage_encode(cfg));
  results.push_back(stage_export(cfg));
  return results;
}

// ---------------------------------------------------------------------------
// Bench + single-pair retrieval

BenchReport bench_retrieval(const Config& cfg, size_t n_queries,
                            const std::string& report_path) {
  Runtime rt = load_runtime(cfg);
  RetrieveConfig rc = retrieve_config(cfg);

  std::vector<std::string> users, items;
  for (size_t i = 0; i < rt.graph.num_nodes(); ++i) {
    const NodeRef& n = rt.graph.node(static_cast<int>(i));
    (n.kind == NodeKind::user ? users : items).push_back(n.id);
  }
  if (n_queries > 0 && (users.empty() || items.empty()))
    throw Error(ErrorCode::EmptyInput, "bench: graph has no user/item nodes");

  auto rng = make_rng(static_cast<uint64_t>(cfg.get_int("seed")), "bench");
  std::ofstream out(report_path);
  if (!out) throw Error(ErrorCode::Io, "cannot write report: " + report_path);
  out << "query,user,item,n_paths,time_us\n";

  std::vector<double> times_ms;
  auto t_start = std::chrono::steady_clock::now();
  for (size_t q = 0; q < n_queries; ++q) {
    std::uniform_int_distribution<size_t> pu(0, users.size() - 1);
    std::uniform_int_distribution<size_t> pi(0, items.size() - 1);
    const std::string& user = users[pu(rng)];
    const std::string& item = items[pi(rng)];
    int u = rt.graph.require(NodeKind::user, user);
    int v = rt.graph.require(NodeKind::item, item);
    auto t0 = std::chrono::steady_clock::now();
    auto paths = retrieve(rt.graph, rt.reps, u, v, rc);
    auto t1 = std::chrono::steady_clock::now();
    double us = std::chrono::duration<double, std::micro>(t1 - t0).count();
    times_ms.push_back(us / 1000.0);
    out << q << ',' << user << ',' << item << ',' << paths.size() << ','
        << static_cast<long long>(us) << '\n';
  }
  auto t_end = std::chrono::steady_clock::now();

  BenchReport rep;
  rep.queries = n_queries;
  rep.total_seconds = std::chrono::duration<double>(t_end - t_start).count();
  if (!times_ms.empty()) {
    std::vector<double> sorted = times_ms;
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&](double p) {
      size_t i = static_cast<size_t>(p * (sorted.size() - 1));
      return sorted[i];
    };
    rep.p50_ms = pct(0.50);
    rep.p95_ms = pct(0.95);
    rep.queries_per_second =
        rep.total_seconds > 0 ? n_queries / rep.total_seconds : 0.0;
  }
  std::ofstream sum(report_path + ".summary.csv");
  sum << "metric,value\n";
  sum << "queries," << rep.queries << "\n";
  sum << "total_seconds," << io::fmt_double(rep.total_seconds) << "\n";
  sum << "p50_ms," << io::fmt_double(rep.p50_ms) << "\n";
  sum << "p95_ms," << io::fmt_double(rep.p95_ms) << "\n";
  sum << "queries_per_second," << io::fmt_double(rep.queries_per_second) << "\n";
  return rep;
}

PairResult retrieve_pair(const Config& cfg, const std::string& user,
                         const std::string& item, bool emit_prompt) {
  Runtime rt = load_runtime(cfg);
  int u = rt.graph.require(NodeKind::user, user);
  int v = rt.graph.require(NodeKind::item, item);
  PairResult res;
  res.paths = retrieve(rt.graph, rt.reps, u, v, retrieve_config(cfg));
  for (const auto& p : res.paths) {
    std::vector<std::string> ids;
    for (int n : p.nodes) ids.push_back(node_tag(rt.graph, n));
    res.path_ids.push_back(std::move(ids));
    res.lengths.push_back(p.length);
  }
  if (emit_prompt) {
    StagePaths sp = layout(cfg);
    auto profiles = load_profiles((sp.store / "profiles.jsonl").string());
    res.prompt = render_prompt(user, item, res.paths, rt.graph, profiles);
  }
  return res;
}

}  // namespace mmpr
