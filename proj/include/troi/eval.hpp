#pragma once

#include <cstdint>
#include <vector>

#include "troi/grid.hpp"
#include "troi/model.hpp"
#include "troi/synth.hpp"
#include "troi/tensor.hpp"

namespace troi {

struct EvalConfig {
  int n_candidates = 0;   // <= 0: use the full test split
  int two_way_passes = 10;
  std::uint64_t rng_seed = 0;
};

// Fraction of rows whose argmax-cosine candidate is their own index. Ties
// break to the lowest index. queries and candidates are row-aligned.
double retrieval_accuracy(const Tensor2& queries, const Tensor2& candidates);

// Two-way identification with an explicit distractor table: row j is correct
// iff cos(p_j, c_j) > cos(p_j, c_{d_j}) (ties incorrect).
double two_way_identification_with(const Tensor2& p, const Tensor2& c,
                                   const std::vector<int>& distractors);

// Seeded version: n_passes independent uniform distractor draws, averaged.
double two_way_identification(const Tensor2& p, const Tensor2& c, int n_passes,
                              std::uint64_t rng_seed);

struct MetricsReport {
  double image_retrieval_acc = 0;  // brain query -> image candidates
  double brain_retrieval_acc = 0;  // image query -> brain candidates
  double two_way_ident = 0;
  double prior_embed_mse = 0;
  double mask_iou = 0;
  double mask_precision = 0;
  double mask_recall = 0;
  int n_candidates = 0;
  int voxel_count = 0;
};

// Plain forward passes over the subject's test split (first n_candidates of
// it when capped). mask supplies the overlap metrics against true_roi and
// voxel_count; the bundle's own input layer decides which voxels it reads.
MetricsReport evaluate(ModelBundle& bundle, const SyntheticSubject& subject,
                       const BinaryMask& mask, const EvalConfig& cfg);

}  // namespace troi
