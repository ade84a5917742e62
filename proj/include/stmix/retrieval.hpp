#pragma once

#include <string>
#include <vector>

#include "stmix/tensor.hpp"

namespace stmix {

using SimMatrix = Matrix;  // queries x gallery, cosine similarities

// s = normalize(v) * normalize(t)^T. Zero rows are rejected.
SimMatrix build_sim(const EmbeddingMatrix& v, const EmbeddingMatrix& t);

// Fraction of queries whose argmax column equals the ground truth.
// Ties break toward the lowest column index.
double recall_at_1(const SimMatrix& s, const std::vector<int>& ground_truth);

// Per-video argmax over its own candidate set; mean correctness.
double multiple_choice_accuracy(const EmbeddingMatrix& video_embs,
                                const std::vector<EmbeddingMatrix>& candidates_per_video,
                                const std::vector<int>& correct_index);

// CSV embedding format: header "dim=D,count=N", then N rows of D decimals.
EmbeddingMatrix read_embeddings_csv(const std::string& path);
void write_embeddings_csv(const EmbeddingMatrix& e, const std::string& path);

// Accepts both the CSV format above and the STMX binary store (a single
// rank-2 tensor named "embeddings").
EmbeddingMatrix load_embeddings(const std::string& path);
void save_embeddings_binary(const EmbeddingMatrix& e, const std::string& path);

// "a video of {label}" prompt helper.
std::string video_prompt(const std::string& label);

}  // namespace stmix
