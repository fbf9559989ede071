#pragma once

#include <cstdint>
#include <vector>

#include "mmpr/datastore.hpp"

namespace mmpr {

// Linear encoder mapping an input embedding (dim D) to the codebook
// latent space (dim d). The decoder is the identity in latent space.
struct ProjectionParams {
  size_t in_dim = 0;
  size_t out_dim = 0;
  std::vector<Vec> weight;  // out_dim rows of in_dim
  Vec bias;                 // out_dim

  Vec apply(const Vec& e) const;
};

ProjectionParams init_projection(size_t in_dim, size_t out_dim, uint64_t seed);

// L layers of K codewords each; layer i quantizes the residual left by
// layer i-1.
struct CodebookStack {
  Modality modality = Modality::text;
  size_t dim = 0;  // codeword dim d
  std::vector<std::vector<Vec>> layers;  // L x K x d
  bool fitted = false;
  uint64_t seed = 0;

  size_t num_layers() const { return layers.size(); }
  size_t codebook_size() const { return layers.empty() ? 0 : layers[0].size(); }
};

struct SemanticId {
  Modality modality = Modality::text;
  std::vector<size_t> indices;  // length L, each in [0, K)
};

struct QuantizationResult {
  SemanticId sid;
  Vec quantized;               // sum of selected codewords
  std::vector<Vec> residuals;  // r_1 .. r_{L+1}
};

// Greedy per-layer Lloyd's k-means on the residuals of the previous layer.
// k-means++ seeding with one centroid forced to the layer's residual mean,
// which guarantees non-increasing layer residual energy.
CodebookStack fit_codebooks(const EmbeddingTable& table,
                            const ProjectionParams& projection,
                            size_t num_layers, size_t codebook_size,
                            uint64_t seed, size_t max_iters = 25,
                            double tol = 1e-10);

// Same fit, starting from already-projected latent vectors.
CodebookStack fit_codebooks_latent(const std::vector<Vec>& latents,
                                   Modality modality, size_t num_layers,
                                   size_t codebook_size, uint64_t seed,
                                   size_t max_iters = 25, double tol = 1e-10);

// Per-layer nearest codeword (ties -> lowest index).
QuantizationResult quantize(const Vec& e, const CodebookStack& stack,
                            const ProjectionParams& projection);
QuantizationResult quantize_latent(const Vec& z, const CodebookStack& stack);

// ||proj(e) - quantized||^2.
double recon_loss(const Vec& e, const QuantizationResult& result,
                  const ProjectionParams& projection);

// (1 + beta) * sum_i ||r_i - v_{c_i}||^2; stop-gradient terms collapse for
// the metric value.
double commit_loss(const QuantizationResult& result, const CodebookStack& stack,
                   double beta = 0.25);

// InfoNCE over in-batch negatives with cosine similarity: the text vector
// varies across the batch against a fixed visual vector per row.
double align_loss(const std::vector<Vec>& zt, const std::vector<Vec>& zv,
                  double tau = 0.07);

struct RqTrainOptions {
  size_t num_layers = 4;
  size_t codebook_size = 256;
  size_t latent_dim = 64;
  size_t epochs = 20;
  double lr = 1e-3;
  double beta = 0.25;
  double tau = 0.07;
  size_t refit_every = 5;   // codebook k-means refit period (epochs)
  double holdout_frac = 0.1;
  uint64_t seed = 0;
};

struct RqTrainReport {
  std::vector<double> train_loss;    // per epoch
  std::vector<double> holdout_loss;  // per epoch
};

struct RqModel {
  ProjectionParams projection_text;
  ProjectionParams projection_visual;
  CodebookStack codebooks_text;
  CodebookStack codebooks_visual;
  RqTrainReport report;
};

// Gradient of the per-item (commit + recon) loss with respect to the latent
// z, holding codewords and codeword selection fixed. Exposed for gradient
// checking.
Vec multi_loss_latent_grad(const QuantizationResult& result, double beta);

// Batch L_multi = align + mean over items of (commit + recon) per modality.
double multi_loss(const std::vector<Vec>& et, const std::vector<Vec>& ev,
                  const ProjectionParams& pt, const ProjectionParams& pv,
                  const CodebookStack& ct, const CodebookStack& cv,
                  double beta, double tau);

// One full-batch gradient-descent step on L_multi through the projections
// only (codewords held fixed). Returns the pre-step loss.
double projection_step(const std::vector<Vec>& et, const std::vector<Vec>& ev,
                       ProjectionParams& pt, ProjectionParams& pv,
                       const CodebookStack& ct, const CodebookStack& cv,
                       double beta, double tau, double lr);

// Full training loop: seeded projection init, periodic k-means refit,
// per-epoch holdout loss.
RqModel train_projection(const EmbeddingTable& text, const EmbeddingTable& visual,
                         const RqTrainOptions& opts);

void save_codebooks(const CodebookStack& stack, const std::string& path);
CodebookStack load_codebooks(const std::string& path, Modality modality);
void save_projection(const ProjectionParams& p, const std::string& path);
ProjectionParams load_projection(const std::string& path);

}  // namespace mmpr
