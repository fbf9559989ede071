#include "mmpr/rq.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "tensor_io.hpp"

namespace mmpr {

namespace {

Vec mean_of(const std::vector<Vec>& points) {
  Vec m(points[0].size(), 0.0);
  for (const auto& p : points)
    for (size_t i = 0; i < m.size(); ++i) m[i] += p[i];
  for (double& x : m) x /= static_cast<double>(points.size());
  return m;
}

size_t nearest_centroid(const Vec& p, const std::vector<Vec>& centroids) {
  size_t best = 0;
  double best_d = sq_dist(p, centroids[0]);
  for (size_t k = 1; k < centroids.size(); ++k) {
    double d = sq_dist(p, centroids[k]);
    if (d < best_d) {  // ties keep the lowest index
      best_d = d;
      best = k;
    }
  }
  return best;
}

// Lloyd's k-means with k-means++ seeding; centroid 0 is forced to the point
// mean so the fitted layer can never do worse than the input variance.
std::vector<Vec> fit_layer(const std::vector<Vec>& points, size_t k,
                           std::mt19937_64& rng, size_t max_iters, double tol) {
  const size_t n = points.size();
  const size_t dim = points[0].size();
  std::vector<Vec> centroids;
  centroids.reserve(k);
  centroids.push_back(mean_of(points));

  std::vector<double> min_d(n);
  for (size_t i = 0; i < n; ++i) min_d[i] = sq_dist(points[i], centroids[0]);

  bool degenerate = false;
  while (centroids.size() < k) {
    double total = std::accumulate(min_d.begin(), min_d.end(), 0.0);
    if (total <= 0.0) {
      // All remaining residuals identical: duplicate centroids and warn.
      if (!degenerate) {
        degenerate = true;
        std::fprintf(stderr,
                     "mmpr: warning: degenerate layer, duplicating centroids\n");
      }
      centroids.push_back(centroids.back());
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double r = u(rng);
    size_t pick = n - 1;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      acc += min_d[i];
      if (r <= acc) {
        pick = i;
        break;
      }
    }
    centroids.push_back(points[pick]);
    for (size_t i = 0; i < n; ++i)
      min_d[i] = std::min(min_d[i], sq_dist(points[i], centroids.back()));
  }

  std::vector<size_t> assign(n);
  double prev_mse = std::numeric_limits<double>::infinity();
  for (size_t iter = 0; iter < max_iters; ++iter) {
    double mse = 0.0;
    for (size_t i = 0; i < n; ++i) {
      assign[i] = nearest_centroid(points[i], centroids);
      mse += sq_dist(points[i], centroids[assign[i]]);
    }
    mse /= static_cast<double>(n);

    std::vector<Vec> sums(k, Vec(dim, 0.0));
    std::vector<size_t> counts(k, 0);
    for (size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (size_t j = 0; j < dim; ++j) sums[assign[i]][j] += points[i][j];
    }
    for (size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (size_t j = 0; j < dim; ++j)
        centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
    }
    if (prev_mse - mse < tol) break;
    prev_mse = mse;
  }
  return centroids;
}

}  // namespace

Vec ProjectionParams::apply(const Vec& e) const {
  if (e.size() != in_dim)
    throw Error(ErrorCode::DimMismatch,
                "projection input dim " + std::to_string(e.size()) +
                    " != " + std::to_string(in_dim));
  Vec z(out_dim);
  for (size_t i = 0; i < out_dim; ++i) z[i] = dot(weight[i], e) + bias[i];
  return z;
}

ProjectionParams init_projection(size_t in_dim, size_t out_dim, uint64_t seed) {
  ProjectionParams p;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(double(in_dim)));
  p.weight.assign(out_dim, Vec(in_dim));
  p.bias.assign(out_dim, 0.0);
  for (auto& row : p.weight)
    for (double& w : row) w = g(rng);
  return p;
}

CodebookStack fit_codebooks_latent(const std::vector<Vec>& latents,
                                   Modality modality, size_t num_layers,
                                   size_t codebook_size, uint64_t seed,
                                   size_t max_iters, double tol) {
  if (latents.empty())
    throw Error(ErrorCode::EmptyInput, "fit_codebooks: empty input");
  if (num_layers < 1 || codebook_size < 1)
    throw Error(ErrorCode::InvalidConfig, "fit_codebooks: L and K must be >= 1");

  CodebookStack stack;
  stack.modality = modality;
  stack.dim = latents[0].size();
  stack.seed = seed;

  std::vector<Vec> residuals = latents;
  for (size_t layer = 0; layer < num_layers; ++layer) {
    auto rng = make_rng(seed, "layer." + std::to_string(layer));
    size_t k = std::min(codebook_size, residuals.size());
    auto centroids = fit_layer(residuals, k, rng, max_iters, tol);
    // Pad duplicated centroids when there are fewer points than K.
    while (centroids.size() < codebook_size) centroids.push_back(centroids.back());
    for (auto& r : residuals) {
      size_t c = nearest_centroid(r, centroids);
      for (size_t j = 0; j < stack.dim; ++j) r[j] -= centroids[c][j];
    }
    stack.layers.push_back(std::move(centroids));
  }
  stack.fitted = true;
  return stack;
}

CodebookStack fit_codebooks(const EmbeddingTable& table,
                            const ProjectionParams& projection,
                            size_t num_layers, size_t codebook_size,
                            uint64_t seed, size_t max_iters, double tol) {
  if (table.rows.empty())
    throw Error(ErrorCode::EmptyInput, "fit_codebooks: empty table");
  std::vector<Vec> latents;
  latents.reserve(table.rows.size());
  for (const auto& [id, e] : table.rows) latents.push_back(projection.apply(e));
  return fit_codebooks_latent(latents, table.modality, num_layers, codebook_size,
                              seed, max_iters, tol);
}

QuantizationResult quantize_latent(const Vec& z, const CodebookStack& stack) {
  if (!stack.fitted)
    throw Error(ErrorCode::NotFitted, "quantize: codebook stack not fitted");
  QuantizationResult res;
  res.sid.modality = stack.modality;
  res.quantized.assign(stack.dim, 0.0);
  Vec r = z;
  res.residuals.push_back(r);
  for (const auto& layer : stack.layers) {
    size_t c = nearest_centroid(r, layer);
    res.sid.indices.push_back(c);
    for (size_t j = 0; j < stack.dim; ++j) {
      res.quantized[j] += layer[c][j];
      r[j] -= layer[c][j];
    }
    res.residuals.push_back(r);
  }
  return res;
}

QuantizationResult quantize(const Vec& e, const CodebookStack& stack,
                            const ProjectionParams& projection) {
  return quantize_latent(projection.apply(e), stack);
}

double recon_loss(const Vec& e, const QuantizationResult& result,
                  const ProjectionParams& projection) {
  return sq_dist(projection.apply(e), result.quantized);
}

double commit_loss(const QuantizationResult& result, const CodebookStack& stack,
                   double beta) {
  double s = 0.0;
  for (size_t i = 0; i < stack.num_layers(); ++i) {
    const Vec& v = stack.layers[i][result.sid.indices[i]];
    s += sq_dist(result.residuals[i], v);
  }
  return (1.0 + beta) * s;
}

double align_loss(const std::vector<Vec>& zt, const std::vector<Vec>& zv,
                  double tau) {
  const size_t n = zt.size();
  if (n != zv.size())
    throw Error(ErrorCode::DimMismatch, "align_loss: batch size mismatch");
  if (n < 2) throw Error(ErrorCode::BatchTooSmall, "align_loss: batch size < 2");

  double total = 0.0;
  for (size_t j = 0; j < n; ++j) {
    // Column j: text vectors vary against the fixed visual vector j.
    Vec logits(n);
    for (size_t jp = 0; jp < n; ++jp)
      logits[jp] = cosine_sim(zt[jp], zv[j]) / tau;
    double mx = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (double l : logits) lse += std::exp(l - mx);
    total += (logits[j] - mx) - std::log(lse);
  }
  return -total / static_cast<double>(n);
}

Vec multi_loss_latent_grad(const QuantizationResult& result, double beta) {
  const size_t dim = result.quantized.size();
  const size_t L = result.residuals.size() - 1;
  Vec g(dim, 0.0);
  // recon: 2 (z - quantized) = 2 r_{L+1}; commit: 2 (1+beta) sum_{i>=2} r_i.
  for (size_t j = 0; j < dim; ++j) g[j] = 2.0 * result.residuals[L][j];
  for (size_t i = 1; i <= L; ++i)
    for (size_t j = 0; j < dim; ++j)
      g[j] += 2.0 * (1.0 + beta) * result.residuals[i][j];
  return g;
}

namespace {

struct BatchEval {
  double item_loss = 0.0;  // mean (commit + recon)
  std::vector<Vec> quantized;
  std::vector<Vec> latent_grads;  // per item, already divided by N
};

BatchEval eval_modality(const std::vector<Vec>& es, const ProjectionParams& p,
                        const CodebookStack& cb, double beta, bool want_grads) {
  BatchEval ev;
  const double n = static_cast<double>(es.size());
  for (const auto& e : es) {
    Vec z = p.apply(e);
    auto q = quantize_latent(z, cb);
    ev.item_loss += (commit_loss(q, cb, beta) + sq_dist(z, q.quantized)) / n;
    if (want_grads) {
      Vec g = multi_loss_latent_grad(q, beta);
      for (double& x : g) x /= n;
      ev.latent_grads.push_back(std::move(g));
    }
    ev.quantized.push_back(std::move(q.quantized));
  }
  return ev;
}

void apply_latent_grads(ProjectionParams& p, const std::vector<Vec>& es,
                        const std::vector<Vec>& grads, double lr) {
  for (size_t s = 0; s < es.size(); ++s) {
    const Vec& g = grads[s];
    for (size_t i = 0; i < p.out_dim; ++i) {
      double gi = g[i];
      if (gi == 0.0) continue;
      Vec& row = p.weight[i];
      for (size_t j = 0; j < p.in_dim; ++j) row[j] -= lr * gi * es[s][j];
      p.bias[i] -= lr * gi;
    }
  }
}

}  // namespace

double multi_loss(const std::vector<Vec>& et, const std::vector<Vec>& ev,
                  const ProjectionParams& pt, const ProjectionParams& pv,
                  const CodebookStack& ct, const CodebookStack& cv,
                  double beta, double tau) {
  auto t = eval_modality(et, pt, ct, beta, false);
  auto v = eval_modality(ev, pv, cv, beta, false);
  double loss = t.item_loss + v.item_loss;
  if (et.size() >= 2) loss += align_loss(t.quantized, v.quantized, tau);
  return loss;
}

double projection_step(const std::vector<Vec>& et, const std::vector<Vec>& ev,
                       ProjectionParams& pt, ProjectionParams& pv,
                       const CodebookStack& ct, const CodebookStack& cv,
                       double beta, double tau, double lr) {
  if (et.size() != ev.size() || et.empty())
    throw Error(ErrorCode::DimMismatch, "projection_step: misaligned batches");
  auto t = eval_modality(et, pt, ct, beta, true);
  auto v = eval_modality(ev, pv, cv, beta, true);
  double loss = t.item_loss + v.item_loss;
  // align depends on the projections only through the quantized vectors,
  // which are constants under the stop-gradient convention.
  if (et.size() >= 2) loss += align_loss(t.quantized, v.quantized, tau);
  if (!std::isfinite(loss))
    throw Error(ErrorCode::NonFiniteLoss, "projection_step: non-finite loss");
  apply_latent_grads(pt, et, t.latent_grads, lr);
  apply_latent_grads(pv, ev, v.latent_grads, lr);
  return loss;
}

RqModel train_projection(const EmbeddingTable& text, const EmbeddingTable& visual,
                         const RqTrainOptions& opts) {
  std::vector<std::string> ids;
  for (const auto& [id, _] : text.rows)
    if (visual.rows.count(id)) ids.push_back(id);
  if (ids.empty())
    throw Error(ErrorCode::EmptyInput, "train_projection: no aligned item ids");

  auto rng = make_rng(opts.seed, "rq.split");
  std::vector<size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  size_t n_hold = std::min(ids.size() - 1,
                           static_cast<size_t>(opts.holdout_frac * ids.size()));

  std::vector<Vec> et_train, ev_train, et_hold, ev_hold;
  for (size_t i = 0; i < order.size(); ++i) {
    const auto& id = ids[order[i]];
    if (i < n_hold) {
      et_hold.push_back(text.rows.at(id));
      ev_hold.push_back(visual.rows.at(id));
    } else {
      et_train.push_back(text.rows.at(id));
      ev_train.push_back(visual.rows.at(id));
    }
  }

  RqModel model;
  model.projection_text =
      init_projection(text.dim, opts.latent_dim, split_seed(opts.seed, "rq.proj.text"));
  model.projection_visual =
      init_projection(visual.dim, opts.latent_dim, split_seed(opts.seed, "rq.proj.visual"));

  auto refit = [&](size_t epoch) {
    std::vector<Vec> zt, zv;
    for (const auto& e : et_train) zt.push_back(model.projection_text.apply(e));
    for (const auto& e : ev_train) zv.push_back(model.projection_visual.apply(e));
    std::string tag = "rq.cb." + std::to_string(epoch);
    model.codebooks_text =
        fit_codebooks_latent(zt, Modality::text, opts.num_layers, opts.codebook_size,
                             split_seed(opts.seed, tag + ".text"));
    model.codebooks_visual =
        fit_codebooks_latent(zv, Modality::visual, opts.num_layers, opts.codebook_size,
                             split_seed(opts.seed, tag + ".visual"));
  };
  refit(0);

  for (size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    double loss = projection_step(et_train, ev_train, model.projection_text,
                                  model.projection_visual, model.codebooks_text,
                                  model.codebooks_visual, opts.beta, opts.tau,
                                  opts.lr);
    model.report.train_loss.push_back(loss);
    if (!et_hold.empty()) {
      model.report.holdout_loss.push_back(
          multi_loss(et_hold, ev_hold, model.projection_text, model.projection_visual,
                     model.codebooks_text, model.codebooks_visual, opts.beta,
                     opts.tau));
    }
    if (opts.refit_every > 0 && (epoch + 1) % opts.refit_every == 0 &&
        epoch + 1 < opts.epochs)
      refit(epoch + 1);
  }
  return model;
}

void save_codebooks(const CodebookStack& stack, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write file: " + path);
  out << "#modality=" << modality_name(stack.modality) << "\n";
  out << "#layers=" << stack.num_layers() << "\n";
  out << "#size=" << stack.codebook_size() << "\n";
  out << "#dim=" << stack.dim << "\n";
  out << "#seed=" << stack.seed << "\n";
  out << "#fitted=" << (stack.fitted ? 1 : 0) << "\n";
  for (size_t l = 0; l < stack.num_layers(); ++l)
    io::write_rows(out, "l" + std::to_string(l), stack.layers[l]);
}

CodebookStack load_codebooks(const std::string& path, Modality modality) {
  auto nt = io::read_named_tensors(path);
  CodebookStack stack;
  stack.modality = modality;
  stack.dim = static_cast<size_t>(nt.meta_int("dim"));
  stack.seed = nt.meta_u64("seed");
  stack.fitted = nt.meta_int("fitted") != 0;
  size_t layers = static_cast<size_t>(nt.meta_int("layers"));
  for (size_t l = 0; l < layers; ++l)
    stack.layers.push_back(nt.rows("l" + std::to_string(l)));
  return stack;
}

void save_projection(const ProjectionParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write file: " + path);
  out << "#in=" << p.in_dim << "\n#out=" << p.out_dim << "\n";
  io::write_rows(out, "w", p.weight);
  io::write_vec(out, "b", p.bias);
}

ProjectionParams load_projection(const std::string& path) {
  auto nt = io::read_named_tensors(path);
  ProjectionParams p;
  p.in_dim = static_cast<size_t>(nt.meta_int("in"));
  p.out_dim = static_cast<size_t>(nt.meta_int("out"));
  p.weight = nt.rows("w");
  p.bias = nt.vec("b");
  return p;
}

}  // namespace mmpr
