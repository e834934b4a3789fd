#pragma once

#include "troi/graph.hpp"
#include "troi/grid.hpp"
#include "troi/synth.hpp"
#include "troi/tensor.hpp"

namespace troi {

struct LossConfig {
  double tau = 0.1;                    // contrastive temperature
  double epsilon = 1.0;                // prior term coefficient
  double psi = 0.0;                    // mask L1 coefficient (stage 1 only)
  double mix_stop_fraction = 1.0 / 3;  // mixing active for this fraction of epochs

  void validate() const;
};

enum class Stage { pretrain, stage1, stage2 };

// Symmetric contrastive loss over S = h_hat c_hat^T / tau with MixCo soft
// targets: W[j,j] = lambda_j, W[j,k_j] += 1 - lambda_j, and the loss is
// -(1/2B) sum W o (row log-softmax + column log-softmax). With lambda = 1 it
// is plain symmetric InfoNCE. h enters the graph; c is a fixed target matrix
// whose rows are the batch's unmixed embeddings.
Graph::NodeRef mixco_contrastive(Graph& g, Graph::NodeRef h, const Tensor2& c,
                                 const MixupBatch& batch, double tau);

// (1/B) sum_j || p_j - (lambda_j c_j + (1 - lambda_j) c_{k_j}) ||^2.
Graph::NodeRef prior_mse(Graph& g, Graph::NodeRef p, const Tensor2& c, const MixupBatch& batch);

// psi-free L1 over the (frozen-aware) mask leaf.
Graph::NodeRef l1_mask_penalty(Graph& g, Graph::NodeRef mask_leaf);

// clip + epsilon*prior, plus psi*l1 in stage 1 (psi ignored elsewhere).
Graph::NodeRef total_loss(Graph& g, Graph::NodeRef clip, Graph::NodeRef prior,
                          Graph::NodeRef l1, const LossConfig& cfg, Stage stage);

// Value-only conveniences for tests and reporting (no external gradients).
double mixco_contrastive_value(const Tensor2& h, const Tensor2& c, const MixupBatch& batch,
                               double tau);
double prior_mse_value(const Tensor2& p, const Tensor2& c, const MixupBatch& batch);
double l1_mask_penalty_value(const WeightedMask& m);
double total_loss_value(double clip, double prior, double l1, const LossConfig& cfg, Stage stage);

}  // namespace troi
