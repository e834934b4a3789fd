#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "troi/loss.hpp"
#include "troi/rng.hpp"

using namespace troi;

namespace {

Tensor2 random_rows(int r, int c, Rng& rng) {
  Tensor2 t(r, c);
  for (double& x : t.v) x = rng.normal();
  return t;
}

Tensor2 normalize_rows(const Tensor2& t) {
  Tensor2 out = t;
  for (int i = 0; i < t.rows; ++i) {
    double n2 = 0.0;
    for (int j = 0; j < t.cols; ++j) n2 += t.at(i, j) * t.at(i, j);
    double n = std::sqrt(n2);
    for (int j = 0; j < t.cols; ++j) out.at(i, j) = t.at(i, j) / n;
  }
  return out;
}

// Independent implementation of the mixed symmetric contrastive loss and its
// gradient with respect to the raw (unnormalized) h, from the definition:
//   S = h_hat c_hat^T / tau,  L = -(1/2B) sum W o (logsm_row(S) + logsm_col(S)).
struct ContrastiveOracle {
  double loss = 0.0;
  Tensor2 dh;
};

ContrastiveOracle contrastive_oracle(const Tensor2& h, const Tensor2& c, const MixupBatch& batch,
                                     double tau) {
  const int B = h.rows;
  Tensor2 hn = normalize_rows(h), cn = normalize_rows(c);
  Tensor2 S(B, B);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < B; ++j) {
      double s = 0.0;
      for (int k = 0; k < h.cols; ++k) s += hn.at(i, k) * cn.at(j, k);
      S.at(i, j) = s / tau;
    }
  Tensor2 W(B, B);
  for (int j = 0; j < B; ++j) {
    W.at(j, j) += batch.lambdas[j];
    W.at(j, batch.targets_b[j]) += 1.0 - batch.lambdas[j];
  }
  auto logsumexp = [](const std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
  };
  Tensor2 Prow(B, B), Pcol(B, B);
  double loss = 0.0;
  for (int i = 0; i < B; ++i) {
    std::vector<double> row(B), col(B);
    for (int j = 0; j < B; ++j) {
      row[j] = S.at(i, j);
      col[j] = S.at(j, i);
    }
    double lr = logsumexp(row), lc = logsumexp(col);
    for (int j = 0; j < B; ++j) {
      Prow.at(i, j) = std::exp(S.at(i, j) - lr);
      Pcol.at(j, i) = std::exp(S.at(j, i) - lc);
      loss -= W.at(i, j) * (S.at(i, j) - lr);
      loss -= W.at(j, i) * (S.at(j, i) - lc);
    }
  }
  loss /= 2.0 * B;

  // dL/dS, then back through S = hn cn^T / tau and the row normalization.
  Tensor2 dS(B, B);
  std::vector<double> rsum(B, 0.0), csum(B, 0.0);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < B; ++j) {
      rsum[i] += W.at(i, j);
      csum[j] += W.at(i, j);
    }
  for (int p = 0; p < B; ++p)
    for (int q = 0; q < B; ++q)
      dS.at(p, q) =
          (rsum[p] * Prow.at(p, q) + csum[q] * Pcol.at(p, q) - 2.0 * W.at(p, q)) / (2.0 * B);

  Tensor2 dhn(B, h.cols);
  for (int i = 0; i < B; ++i)
    for (int k = 0; k < h.cols; ++k) {
      double s = 0.0;
      for (int j = 0; j < B; ++j) s += dS.at(i, j) * cn.at(j, k);
      dhn.at(i, k) = s / tau;
    }
  ContrastiveOracle out;
  out.loss = loss;
  out.dh = Tensor2(B, h.cols);
  for (int i = 0; i < B; ++i) {
    double n2 = 0.0, dot = 0.0;
    for (int k = 0; k < h.cols; ++k) n2 += h.at(i, k) * h.at(i, k);
    double n = std::sqrt(n2);
    for (int k = 0; k < h.cols; ++k) dot += dhn.at(i, k) * hn.at(i, k);
    for (int k = 0; k < h.cols; ++k)
      out.dh.at(i, k) = (dhn.at(i, k) - hn.at(i, k) * dot) / n;
  }
  return out;
}

MixupBatch identity_batch(int B) {
  MixupBatch b;
  b.inputs.resize(B);
  for (int j = 0; j < B; ++j) {
    b.targets_a.push_back(j);
    b.targets_b.push_back((j + 1) % B);
    b.lambdas.push_back(1.0);
  }
  return b;
}

MixupBatch random_mix_batch(int B, Rng& rng) {
  MixupBatch b = identity_batch(B);
  for (int j = 0; j < B; ++j) {
    b.lambdas[j] = rng.beta(0.2, 0.2);
    int k = (int)rng.below(B - 1);
    b.targets_b[j] = k + (k >= j ? 1 : 0);
  }
  return b;
}

}  // namespace

TEST_SUITE_BEGIN("loss");

TEST_CASE("two orthonormal pairs at tau 1 give the closed-form value") {
  Tensor2 h(2, 2), c(2, 2);
  h.v = {1.0, 0.0, 0.0, 1.0};
  c.v = {1.0, 0.0, 0.0, 1.0};
  MixupBatch b = identity_batch(2);
  double got = mixco_contrastive_value(h, c, b, 1.0);
  // Each row/column softmax CE is log(1 + e^-1); the average keeps it.
  CHECK(got == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("identity lambdas reduce the loss to symmetric InfoNCE") {
  Rng rng(70, "loss.infonce");
  for (int trial = 0; trial < 8; ++trial) {
    int B = 3 + (int)rng.below(6);
    int d = 3 + (int)rng.below(5);
    Tensor2 h = random_rows(B, d, rng), c = normalize_rows(random_rows(B, d, rng));
    MixupBatch batch = identity_batch(B);
    double tau = rng.uniform(0.2, 1.0);

    ContrastiveOracle want = contrastive_oracle(h, c, batch, tau);
    // Value path.
    CHECK(std::abs(mixco_contrastive_value(h, c, batch, tau) - want.loss) < 1e-10);
    // Gradient path through the graph.
    h.ensure_grad();
    h.zero_grad();
    Graph g;
    auto loss = mixco_contrastive(g, g.leaf(h, "h"), c, batch, tau);
    CHECK(std::abs(g.scalar(loss) - want.loss) < 1e-10);
    g.backward(loss);
    for (std::size_t i = 0; i < h.g.size(); ++i) CHECK(std::abs(h.g[i] - want.dh.v[i]) < 1e-8);
  }
}

TEST_CASE("mixed lambdas match the soft-target oracle") {
  Rng rng(71, "loss.mixed");
  for (int trial = 0; trial < 8; ++trial) {
    int B = 4 + (int)rng.below(4);
    int d = 4;
    Tensor2 h = random_rows(B, d, rng), c = normalize_rows(random_rows(B, d, rng));
    MixupBatch batch = random_mix_batch(B, rng);
    double tau = 0.3;

    ContrastiveOracle want = contrastive_oracle(h, c, batch, tau);
    CHECK(std::abs(mixco_contrastive_value(h, c, batch, tau) - want.loss) < 1e-10);
    h.ensure_grad();
    h.zero_grad();
    Graph g;
    auto loss = mixco_contrastive(g, g.leaf(h, "h"), c, batch, tau);
    g.backward(loss);
    for (std::size_t i = 0; i < h.g.size(); ++i) CHECK(std::abs(h.g[i] - want.dh.v[i]) < 1e-8);
  }
}

TEST_CASE("prior mse matches a hand computation") {
  Rng rng(72, "loss.prior");
  int B = 5, d = 3;
  Tensor2 p = random_rows(B, d, rng), c = random_rows(B, d, rng);
  MixupBatch batch = random_mix_batch(B, rng);
  double want = 0.0;
  for (int j = 0; j < B; ++j)
    for (int k = 0; k < d; ++k) {
      double target =
          batch.lambdas[j] * c.at(j, k) + (1.0 - batch.lambdas[j]) * c.at(batch.targets_b[j], k);
      double diff = p.at(j, k) - target;
      want += diff * diff;
    }
  want /= B;
  CHECK(prior_mse_value(p, c, batch) == doctest::Approx(want).epsilon(1e-12));

  Graph g;
  auto node = prior_mse(g, g.leaf(p, "p"), c, batch);
  CHECK(g.scalar(node) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("l1 penalty value skips frozen entries") {
  WeightedMask m = WeightedMask::ones(Dims3{2, 2, 1});
  m.weights = {0.5, 0.25, 0.0, 1.0};
  m.frozen = {0, 0, 1, 0};
  CHECK(l1_mask_penalty_value(m) == doctest::Approx(1.75));
}

TEST_CASE("total loss applies psi only in stage 1") {
  LossConfig cfg;
  cfg.epsilon = 0.5;
  cfg.psi = 0.1;
  CHECK(total_loss_value(2.0, 1.0, 3.0, cfg, Stage::pretrain) == doctest::Approx(2.5));
  CHECK(total_loss_value(2.0, 1.0, 3.0, cfg, Stage::stage2) == doctest::Approx(2.5));
  CHECK(total_loss_value(2.0, 1.0, 3.0, cfg, Stage::stage1) == doctest::Approx(2.8));
}

TEST_CASE("graph total loss composes the three terms") {
  Rng rng(73, "loss.total");
  Tensor2 h = random_rows(4, 3, rng), p = random_rows(4, 3, rng);
  Tensor2 c = normalize_rows(random_rows(4, 3, rng));
  Tensor2 mask(1, 6);
  for (double& x : mask.v) x = rng.uniform(0.0, 1.0);
  std::vector<std::uint8_t> frozen(6, 0);
  MixupBatch batch = random_mix_batch(4, rng);
  LossConfig cfg;
  cfg.tau = 0.4;
  cfg.epsilon = 0.7;
  cfg.psi = 0.2;

  Graph g;
  auto clip = mixco_contrastive(g, g.leaf(h, "h"), c, batch, cfg.tau);
  auto prior = prior_mse(g, g.leaf(p, "p"), c, batch);
  auto l1 = l1_mask_penalty(g, g.leaf_frozen(mask, frozen, "mask"));
  auto total = total_loss(g, clip, prior, l1, cfg, Stage::stage1);
  double want = g.scalar(clip) + cfg.epsilon * g.scalar(prior) + cfg.psi * g.scalar(l1);
  CHECK(g.scalar(total) == doctest::Approx(want).epsilon(1e-12));

  // Pretrain ignores the l1 node even when present.
  auto total_pre = total_loss(g, clip, prior, l1, cfg, Stage::pretrain);
  CHECK(g.scalar(total_pre) ==
        doctest::Approx(g.scalar(clip) + cfg.epsilon * g.scalar(prior)).epsilon(1e-12));

  // Stage 1 without an l1 node is a configuration error.
  CHECK_THROWS_AS(total_loss(g, clip, prior, Graph::NodeRef{}, cfg, Stage::stage1),
                  std::invalid_argument);
}

TEST_CASE("batch validation rejects malformed mixes") {
  Rng rng(74, "loss.check");
  Tensor2 h = random_rows(3, 2, rng);
  Tensor2 c = normalize_rows(random_rows(3, 2, rng));
  MixupBatch bad = identity_batch(3);
  bad.lambdas[1] = 1.5;  // outside [0, 1]
  Graph g;
  CHECK_THROWS_AS(mixco_contrastive(g, g.leaf(h, "h"), c, bad, 0.5), std::invalid_argument);

  MixupBatch bad2 = identity_batch(3);
  bad2.targets_b[0] = 7;  // out of range
  Graph g2;
  CHECK_THROWS_AS(mixco_contrastive(g2, g2.leaf(h, "h"), c, bad2, 0.5), std::invalid_argument);

  MixupBatch tiny = identity_batch(1);
  Tensor2 h1 = random_rows(1, 2, rng), c1 = normalize_rows(random_rows(1, 2, rng));
  Graph g3;
  CHECK_THROWS_AS(mixco_contrastive(g3, g3.leaf(h1, "h"), c1, tiny, 0.5), std::invalid_argument);
}

TEST_CASE("loss config validation") {
  LossConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.tau = 0.1;
  cfg.mix_stop_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_SUITE_END();
