#include "mmpr/userrep.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "tensor_io.hpp"

namespace mmpr {

SeqEncoderParams init_seq_encoder(size_t dim, uint64_t seed) {
  SeqEncoderParams p;
  p.dim = dim;
  p.w_u.assign(dim, Vec(dim, 0.0));
  p.bias.assign(dim, 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1e-2);
  for (size_t i = 0; i < dim; ++i) {
    for (size_t j = 0; j < dim; ++j) p.w_u[i][j] = g(rng);
    p.w_u[i][i] += 1.0;  // identity plus seeded noise
  }
  return p;
}

ItemFeature item_feature(const std::string& item, const EmbeddingTable& text,
                         const EmbeddingTable& visual, const CodebookStack& ct,
                         const CodebookStack& cv, const ProjectionParams& pt,
                         const ProjectionParams& pv) {
  auto ti = text.rows.find(item);
  auto vi = visual.rows.find(item);
  if (ti == text.rows.end() && vi == visual.rows.end())
    throw Error(ErrorCode::UnknownItem, "item_feature: unknown item: " + item);
  if (ti == text.rows.end() || vi == visual.rows.end())
    throw Error(ErrorCode::MissingModality,
                "item_feature: item missing a modality: " + item);

  Vec zt = pt.apply(ti->second);
  Vec zv = pv.apply(vi->second);
  auto qt = quantize_latent(zt, ct);
  auto qv = quantize_latent(zv, cv);

  ItemFeature f;
  f.item = item;
  f.vector.reserve(zt.size() + qt.quantized.size() + zv.size() + qv.quantized.size());
  f.vector.insert(f.vector.end(), zt.begin(), zt.end());
  f.vector.insert(f.vector.end(), qt.quantized.begin(), qt.quantized.end());
  f.vector.insert(f.vector.end(), zv.begin(), zv.end());
  f.vector.insert(f.vector.end(), qv.quantized.begin(), qv.quantized.end());
  return f;
}

static Vec meanpool(const std::vector<const Vec*>& vs) {
  Vec m(vs[0]->size(), 0.0);
  for (const Vec* v : vs)
    for (size_t i = 0; i < m.size(); ++i) m[i] += (*v)[i];
  for (double& x : m) x /= static_cast<double>(vs.size());
  return m;
}

UserRep encode_user(const UserSequence& seq, const FeatureMap& features,
                    const SeqEncoderParams& params) {
  if (seq.items.empty())
    throw Error(ErrorCode::EmptySequence, "encode_user: empty sequence for " + seq.user);
  std::vector<const Vec*> vs;
  vs.reserve(seq.items.size());
  for (const auto& item : seq.items) {
    auto it = features.find(item);
    if (it == features.end())
      throw Error(ErrorCode::UnknownItem, "encode_user: no feature for item " + item);
    vs.push_back(&it->second);
  }
  Vec m = meanpool(vs);
  UserRep rep;
  rep.user = seq.user;
  rep.vector.resize(params.dim);
  for (size_t i = 0; i < params.dim; ++i)
    rep.vector[i] = dot(params.w_u[i], m) + params.bias[i];
  return rep;
}

double infonce(const Vec& h, const Vec& pos, const std::vector<Vec>& negs,
               double temperature) {
  Vec logits;
  logits.reserve(negs.size() + 1);
  logits.push_back(dot(h, pos) / temperature);
  for (const auto& n : negs) logits.push_back(dot(h, n) / temperature);
  double mx = *std::max_element(logits.begin(), logits.end());
  double lse = 0.0;
  for (double l : logits) lse += std::exp(l - mx);
  return -(logits[0] - mx) + std::log(lse);
}

namespace {

struct Grads {
  std::vector<Vec> w_u;
  Vec b_u;
  std::vector<Vec> w_t, w_v;
  Vec b_t, b_v;
};

// Routes a feature-space gradient into the two projection blocks; quantized
// blocks carry no gradient.
void route_feature_grad(Grads& g, const Vec& gf, size_t d, const Vec& et,
                        const Vec& ev) {
  for (size_t i = 0; i < d; ++i) {
    double gt = gf[i];
    double gv = gf[2 * d + i];
    if (gt != 0.0) {
      for (size_t j = 0; j < et.size(); ++j) g.w_t[i][j] += gt * et[j];
      g.b_t[i] += gt;
    }
    if (gv != 0.0) {
      for (size_t j = 0; j < ev.size(); ++j) g.w_v[i][j] += gv * ev[j];
      g.b_v[i] += gv;
    }
  }
}

}  // namespace

double seq_train_step(SeqTrainState& state, const std::vector<SeqTrainSample>& batch,
                      const EmbeddingTable& text, const EmbeddingTable& visual,
                      const CodebookStack& ct, const CodebookStack& cv,
                      double lr, double temperature) {
  const size_t dim = state.encoder.dim;
  const size_t d = state.proj_text.out_dim;

  Grads g;
  g.w_u.assign(dim, Vec(dim, 0.0));
  g.b_u.assign(dim, 0.0);
  g.w_t.assign(d, Vec(state.proj_text.in_dim, 0.0));
  g.b_t.assign(d, 0.0);
  g.w_v.assign(d, Vec(state.proj_visual.in_dim, 0.0));
  g.b_v.assign(d, 0.0);

  // Features are fixed within a step; memoize per item.
  std::map<std::string, Vec> cache;
  auto feat = [&](const std::string& item) -> const Vec& {
    auto it = cache.find(item);
    if (it == cache.end())
      it = cache.emplace(item, item_feature(item, text, visual, ct, cv,
                                            state.proj_text, state.proj_visual)
                                   .vector)
               .first;
    return it->second;
  };

  double total_loss = 0.0;
  const double bn = static_cast<double>(batch.size());

  for (const auto& sample : batch) {
    std::vector<Vec> seq_feats;
    for (const auto& item : sample.sequence) seq_feats.push_back(feat(item));
    std::vector<const Vec*> ptrs;
    for (const auto& f : seq_feats) ptrs.push_back(&f);
    Vec m = meanpool(ptrs);

    Vec h(dim);
    for (size_t i = 0; i < dim; ++i)
      h[i] = dot(state.encoder.w_u[i], m) + state.encoder.bias[i];

    std::vector<Vec> cand_feats;
    cand_feats.push_back(feat(sample.positive));
    for (const auto& n : sample.negatives) cand_feats.push_back(feat(n));

    Vec logits(cand_feats.size());
    for (size_t c = 0; c < cand_feats.size(); ++c)
      logits[c] = dot(h, cand_feats[c]) / temperature;
    double mx = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (double l : logits) lse += std::exp(l - mx);
    total_loss += (-(logits[0] - mx) + std::log(lse)) / bn;

    // dL/dlogit_c = p_c - [c == positive]
    Vec dlogit(cand_feats.size());
    for (size_t c = 0; c < cand_feats.size(); ++c)
      dlogit[c] = std::exp(logits[c] - mx) / lse - (c == 0 ? 1.0 : 0.0);

    Vec dh(dim, 0.0);
    for (size_t c = 0; c < cand_feats.size(); ++c) {
      double w = dlogit[c] / (temperature * bn);
      for (size_t i = 0; i < dim; ++i) dh[i] += w * cand_feats[c][i];
      // candidate feature gradient: w * h
      Vec gf(dim);
      for (size_t i = 0; i < dim; ++i) gf[i] = w * h[i];
      const std::string& id = c == 0 ? sample.positive : sample.negatives[c - 1];
      route_feature_grad(g, gf, d, text.rows.at(id), visual.rows.at(id));
    }

    for (size_t i = 0; i < dim; ++i) {
      if (dh[i] == 0.0) continue;
      for (size_t j = 0; j < dim; ++j) g.w_u[i][j] += dh[i] * m[j];
      g.b_u[i] += dh[i];
    }

    // dL/dm = W_u^T dh, spread evenly over the pooled sequence features.
    Vec dm(dim, 0.0);
    for (size_t i = 0; i < dim; ++i)
      for (size_t j = 0; j < dim; ++j) dm[j] += state.encoder.w_u[i][j] * dh[i];
    const double inv_n = 1.0 / static_cast<double>(sample.sequence.size());
    Vec gf(dim);
    for (size_t i = 0; i < dim; ++i) gf[i] = dm[i] * inv_n;
    for (const auto& item : sample.sequence)
      route_feature_grad(g, gf, d, text.rows.at(item), visual.rows.at(item));
  }

  if (!std::isfinite(total_loss))
    throw Error(ErrorCode::NonFiniteLoss, "seq_train_step: non-finite loss");

  for (size_t i = 0; i < dim; ++i) {
    for (size_t j = 0; j < dim; ++j) state.encoder.w_u[i][j] -= lr * g.w_u[i][j];
    state.encoder.bias[i] -= lr * g.b_u[i];
  }
  for (size_t i = 0; i < d; ++i) {
    for (size_t j = 0; j < state.proj_text.in_dim; ++j)
      state.proj_text.weight[i][j] -= lr * g.w_t[i][j];
    state.proj_text.bias[i] -= lr * g.b_t[i];
    for (size_t j = 0; j < state.proj_visual.in_dim; ++j)
      state.proj_visual.weight[i][j] -= lr * g.w_v[i][j];
    state.proj_visual.bias[i] -= lr * g.b_v[i];
  }
  return total_loss;
}

SeqTrainReport train_user_rep(SeqTrainState& state,
                              const std::vector<UserSequence>& sequences,
                              const EmbeddingTable& text,
                              const EmbeddingTable& visual,
                              const CodebookStack& ct, const CodebookStack& cv,
                              const SeqTrainOptions& opts) {
  std::vector<std::string> all_items;
  for (const auto& [id, _] : text.rows)
    if (visual.rows.count(id)) all_items.push_back(id);

  SeqTrainReport report;
  auto rng = make_rng(opts.seed, "seq.train");
  for (size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<SeqTrainSample> batch;
    for (const auto& seq : sequences) {
      if (seq.items.size() < 2) continue;
      SeqTrainSample s;
      s.sequence.assign(seq.items.begin(), seq.items.end() - 1);
      s.positive = seq.items.back();
      std::set<std::string> in_seq(seq.items.begin(), seq.items.end());
      if (in_seq.size() >= all_items.size()) continue;
      std::uniform_int_distribution<size_t> pick(0, all_items.size() - 1);
      while (s.negatives.size() < opts.negatives) {
        const auto& cand = all_items[pick(rng)];
        if (in_seq.count(cand)) continue;
        s.negatives.push_back(cand);
      }
      if (!s.negatives.empty()) batch.push_back(std::move(s));
    }
    if (batch.empty()) break;
    report.loss.push_back(seq_train_step(state, batch, text, visual, ct, cv,
                                         opts.lr, opts.temperature));
  }
  return report;
}

void save_seq_encoder(const SeqEncoderParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write file: " + path);
  out << "#dim=" << p.dim << "\n";
  io::write_rows(out, "w", p.w_u);
  io::write_vec(out, "b", p.bias);
}

SeqEncoderParams load_seq_encoder(const std::string& path) {
  auto nt = io::read_named_tensors(path);
  SeqEncoderParams p;
  p.dim = static_cast<size_t>(nt.meta_int("dim"));
  p.w_u = nt.rows("w");
  p.bias = nt.vec("b");
  return p;
}

}  // namespace mmpr
