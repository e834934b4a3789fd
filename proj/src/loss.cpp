#include "troi/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace troi {

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("LossConfig: tau must be positive");
  if (epsilon < 0.0 || psi < 0.0)
    throw std::invalid_argument("LossConfig: epsilon and psi must be nonnegative");
  if (!(mix_stop_fraction >= 0.0 && mix_stop_fraction <= 1.0))
    throw std::invalid_argument("LossConfig: mix_stop_fraction must be in [0, 1]");
}

namespace {

void check_batch(const Tensor2& like, const MixupBatch& batch, const Tensor2& c,
                 const char* what) {
  int B = like.rows;
  if (B < 2) throw std::invalid_argument(std::string(what) + ": batch size must be >= 2");
  if (c.rows != B || c.cols != like.cols)
    throw std::invalid_argument(std::string(what) + ": target shape " + c.shape_str() +
                                " vs output " + like.shape_str());
  if (batch.size() != B || static_cast<int>(batch.lambdas.size()) != B)
    throw std::invalid_argument(std::string(what) + ": mixup batch size mismatch");
  for (int j = 0; j < B; ++j) {
    if (batch.targets_a[j] != j)
      throw std::invalid_argument(std::string(what) + ": targets_a must be batch-local identity");
    int k = batch.targets_b[j];
    if (k < 0 || k >= B)
      throw std::invalid_argument(std::string(what) + ": targets_b index out of range");
    double lam = batch.lambdas[j];
    if (!(lam >= 0.0 && lam <= 1.0))
      throw std::invalid_argument(std::string(what) + ": lambda outside [0, 1]");
  }
}

Tensor2 mix_weights(const MixupBatch& batch, int B) {
  Tensor2 W(B, B);
  for (int j = 0; j < B; ++j) {
    W.at(j, j) += batch.lambdas[j];
    W.at(j, batch.targets_b[j]) += 1.0 - batch.lambdas[j];
  }
  return W;
}

Tensor2 mixed_targets(const MixupBatch& batch, const Tensor2& c) {
  Tensor2 t(c.rows, c.cols);
  for (int j = 0; j < c.rows; ++j) {
    double lam = batch.lambdas[j];
    int k = batch.targets_b[j];
    for (int d = 0; d < c.cols; ++d) t.at(j, d) = lam * c.at(j, d) + (1.0 - lam) * c.at(k, d);
  }
  return t;
}

Tensor2 normalize_rows_value(const Tensor2& x, const char* what) {
  Tensor2 out = x;
  for (int i = 0; i < x.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < x.cols; ++j) s += x.at(i, j) * x.at(i, j);
    double norm = std::sqrt(s);
    if (norm == 0.0)
      throw std::runtime_error(std::string(what) + ": zero-norm row " + std::to_string(i));
    for (int j = 0; j < x.cols; ++j) out.at(i, j) /= norm;
  }
  return out;
}

}  // namespace

Graph::NodeRef mixco_contrastive(Graph& g, Graph::NodeRef h, const Tensor2& c,
                                 const MixupBatch& batch, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("mixco_contrastive: tau must be positive");
  const Tensor2& H = g.value(h);
  check_batch(H, batch, c, "mixco_contrastive");
  int B = H.rows;
  Graph::NodeRef hn = g.l2_normalize_rows(h, "clip.h_norm");
  Tensor2 cn = normalize_rows_value(c, "mixco_contrastive targets");
  Graph::NodeRef cnode = g.constant(std::move(cn), "clip.c_norm");
  Graph::NodeRef scores =
      g.scale(g.matmul_nt(hn, cnode, "clip.scores"), 1.0 / tau, "clip.scores_scaled");
  return g.softmax_nll(scores, mix_weights(batch, B), "clip.loss");
}

Graph::NodeRef prior_mse(Graph& g, Graph::NodeRef p, const Tensor2& c, const MixupBatch& batch) {
  const Tensor2& P = g.value(p);
  check_batch(P, batch, c, "prior_mse");
  return g.mse_to(p, mixed_targets(batch, c), "prior.loss");
}

Graph::NodeRef l1_mask_penalty(Graph& g, Graph::NodeRef mask_leaf) {
  return g.l1_sum(mask_leaf, "mask.l1");
}

Graph::NodeRef total_loss(Graph& g, Graph::NodeRef clip, Graph::NodeRef prior,
                          Graph::NodeRef l1, const LossConfig& cfg, Stage stage) {
  cfg.validate();
  Graph::NodeRef base = g.add_scaled(clip, prior, 1.0, cfg.epsilon, "loss.clip_prior");
  if (stage != Stage::stage1) return base;
  if (l1.id < 0) throw std::invalid_argument("total_loss: stage 1 requires the mask L1 term");
  return g.add_scaled(base, l1, 1.0, cfg.psi, "loss.total");
}

double mixco_contrastive_value(const Tensor2& h, const Tensor2& c, const MixupBatch& batch,
                               double tau) {
  Graph g;
  Tensor2 hc = h;
  Graph::NodeRef hn = g.leaf(hc, "h");
  return g.scalar(mixco_contrastive(g, hn, c, batch, tau));
}

double prior_mse_value(const Tensor2& p, const Tensor2& c, const MixupBatch& batch) {
  Graph g;
  Tensor2 pc = p;
  Graph::NodeRef pn = g.leaf(pc, "p");
  return g.scalar(prior_mse(g, pn, c, batch));
}

double l1_mask_penalty_value(const WeightedMask& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.weights.size(); ++i)
    if (!m.frozen[i]) s += std::abs(m.weights[i]);
  return s;
}

double total_loss_value(double clip, double prior, double l1, const LossConfig& cfg,
                        Stage stage) {
  cfg.validate();
  double t = clip + cfg.epsilon * prior;
  if (stage == Stage::stage1) t += cfg.psi * l1;
  return t;
}

}  // namespace troi
