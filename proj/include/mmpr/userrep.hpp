#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmpr/rq.hpp"

namespace mmpr {

// Item feature of dim 4d: [proj_t(e^t), z^t_quantized, proj_v(e^v), z^v_quantized].
struct ItemFeature {
  std::string item;
  Vec vector;
};

struct UserRep {
  std::string user;
  Vec vector;
};

// Mean-pool sequence encoder: h = W_u * meanpool(item features) + bias.
struct SeqEncoderParams {
  size_t dim = 0;           // 4d
  std::vector<Vec> w_u;     // dim x dim
  Vec bias;                 // dim
};

SeqEncoderParams init_seq_encoder(size_t dim, uint64_t seed);

ItemFeature item_feature(const std::string& item, const EmbeddingTable& text,
                         const EmbeddingTable& visual, const CodebookStack& ct,
                         const CodebookStack& cv, const ProjectionParams& pt,
                         const ProjectionParams& pv);

using FeatureMap = std::map<std::string, Vec>;

UserRep encode_user(const UserSequence& seq, const FeatureMap& features,
                    const SeqEncoderParams& params);

// -log(exp(h.e+) / (exp(h.e+) + sum exp(h.e-))), log-sum-exp stabilized.
double infonce(const Vec& h, const Vec& pos, const std::vector<Vec>& negs,
               double temperature = 1.0);

struct SeqTrainSample {
  std::vector<std::string> sequence;  // item ids in the user's history
  std::string positive;
  std::vector<std::string> negatives;
};

struct SeqTrainState {
  SeqEncoderParams encoder;
  ProjectionParams proj_text;
  ProjectionParams proj_visual;
};

// One gradient-descent step on mean InfoNCE over the batch, with analytic
// gradients through W_u, bias, and both projections (quantized blocks are
// constants). Returns the pre-step mean loss.
double seq_train_step(SeqTrainState& state, const std::vector<SeqTrainSample>& batch,
                      const EmbeddingTable& text, const EmbeddingTable& visual,
                      const CodebookStack& ct, const CodebookStack& cv,
                      double lr, double temperature = 1.0);

struct SeqTrainOptions {
  size_t epochs = 30;
  double lr = 0.05;
  size_t negatives = 32;
  double temperature = 1.0;
  uint64_t seed = 0;
};

struct SeqTrainReport {
  std::vector<double> loss;  // per epoch
};

// Trains on leave-one-out samples from the sequences: positive = last item,
// negatives sampled uniformly outside the sequence.
SeqTrainReport train_user_rep(SeqTrainState& state,
                              const std::vector<UserSequence>& sequences,
                              const EmbeddingTable& text,
                              const EmbeddingTable& visual,
                              const CodebookStack& ct, const CodebookStack& cv,
                              const SeqTrainOptions& opts);

void save_seq_encoder(const SeqEncoderParams& p, const std::string& path);
SeqEncoderParams load_seq_encoder(const std::string& path);

}  // namespace mmpr
