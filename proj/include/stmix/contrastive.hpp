#pragma once

#include <string>
#include <vector>

#include "stmix/model.hpp"

namespace stmix {

// One video-text batch: paired rows, learnable temperature.
struct VTCBatch {
    EmbeddingMatrix v;  // N x D video embeddings (pre-normalization)
    EmbeddingMatrix t;  // N x D text embeddings
    float tau = 0.07f;
};

struct VTCLoss {
    float total = 0.0f;  // (v2t + t2v) / 2
    float v2t = 0.0f;
    float t2v = 0.0f;
};

struct VTCGrad {
    Matrix dv, dt;  // w.r.t. the raw (un-normalized) embeddings
    float dtau = 0.0f;
};

// Symmetric InfoNCE over cosine similarities, mean reduction over the batch.
VTCLoss vtc_loss(const VTCBatch& b);
VTCGrad vtc_loss_grad(const VTCBatch& b, VTCLoss* loss_out = nullptr);

struct TrainConfig {
    float lr = 0.01f;
    int epochs = 30;
    int batch = 16;
    float warmup_frac = 0.1f;
    std::uint64_t seed = 0;
    float tau0 = 0.07f;
    std::vector<std::string> subsets = {"proj"};
    float fd_step = 1e-3f;
    std::string log_path;  // optional: CSV lines "step,loss,r1"
};

struct TrainRecord {
    int step = 0;
    float loss = 0.0f;
    double holdout_r1 = 0.0;
};

struct TrainResult {
    std::vector<TrainRecord> log;
    float initial_loss = 0.0f;
    float final_loss = 0.0f;
    double holdout_t2v_r1 = 0.0;
    float tau = 0.0f;
};

// K well-separated clusters: orthonormal centers are the text embeddings;
// each clip renders a noised center as a time-constant pattern.
struct SyntheticDataset {
    std::vector<TokenGrid> train_clips, holdout_clips;
    EmbeddingMatrix train_texts, holdout_texts;
    std::vector<int> train_cluster, holdout_cluster;
};

SyntheticDataset make_synthetic_dataset(const ModelConfig& cfg, int clusters, int train_per_cluster,
                                        int holdout_per_cluster, std::uint64_t seed,
                                        float noise = 0.02f);

// Gradient descent where encoder-parameter gradients come from central finite
// differences over the selected trainable subset and the temperature gradient
// is analytic. Trainable parameter count is capped at 4096.
TrainResult train_toy(Model& model, const SyntheticDataset& data, const TrainConfig& cfg);

}  // namespace stmix
