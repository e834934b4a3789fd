#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "troi/graph.hpp"
#include "troi/loss.hpp"
#include "troi/model.hpp"
#include "troi/rng.hpp"

using namespace troi;

namespace {

Tensor2 random_tensor(int r, int c, Rng& rng, double scale = 1.0) {
  Tensor2 t(r, c);
  for (double& x : t.v) x = rng.uniform(-scale, scale);
  return t;
}

// Central-difference check of d(loss)/d(entries of every tensor in `leaves`)
// against the gradients accumulated by one backward pass. `eval` rebuilds the
// graph from the current tensor contents and returns the loss value; `grads`
// runs forward+backward once and leaves gradients in the tensors' g buffers.
void fd_check(std::vector<Tensor2*> leaves, const std::function<double()>& eval,
              const std::function<void()>& grads, double h = 1e-5, double tol = 1e-6,
              const std::vector<const std::vector<std::uint8_t>*>& skip = {}) {
  for (Tensor2* t : leaves) {
    t->ensure_grad();
    t->zero_grad();
  }
  grads();
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor2& t = *leaves[li];
    const std::vector<std::uint8_t>* frozen =
        li < skip.size() ? skip[li] : nullptr;
    for (std::size_t i = 0; i < t.v.size(); ++i) {
      if (frozen && (*frozen)[i]) {
        REQUIRE(t.g[i] == 0.0);
        continue;
      }
      double saved = t.v[i];
      t.v[i] = saved + h;
      double up = eval();
      t.v[i] = saved - h;
      double dn = eval();
      t.v[i] = saved;
      double fd = (up - dn) / (2.0 * h);
      double an = t.g[i];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
      REQUIRE(std::abs(fd - an) / denom < tol);
    }
  }
}

Tensor2 naive_matmul(const Tensor2& a, const Tensor2& b) {
  Tensor2 out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("graph");

TEST_CASE("matmul and matmul_nt match a naive triple loop") {
  Rng rng(50, "graph.mm");
  for (int trial = 0; trial < 10; ++trial) {
    int m = 1 + (int)rng.below(6), k = 1 + (int)rng.below(6), n = 1 + (int)rng.below(6);
    Tensor2 a = random_tensor(m, k, rng), b = random_tensor(k, n, rng);
    Graph g;
    auto ra = g.leaf(a, "a"), rb = g.leaf(b, "b");
    Tensor2 want = naive_matmul(a, b);
    const Tensor2& got = g.value(g.matmul(ra, rb, "ab"));
    for (std::size_t i = 0; i < want.v.size(); ++i)
      CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));

    Tensor2 bt(n, k);  // matmul_nt multiplies by the transpose of its second arg
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) bt.at(i, j) = b.at(j, i);
    Graph g2;
    const Tensor2& got2 = g2.value(g2.matmul_nt(g2.leaf(a, "a"), g2.leaf(bt, "bt"), "abt"));
    for (std::size_t i = 0; i < want.v.size(); ++i)
      CHECK(got2.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("elementwise and matmul ops pass finite-difference gradcheck") {
  Rng rng(51, "graph.fd");
  Tensor2 a = random_tensor(3, 4, rng), b = random_tensor(4, 2, rng);
  Tensor2 bias = random_tensor(1, 2, rng);
  Tensor2 m = random_tensor(1, 4, rng);
  Tensor2 c = random_tensor(3, 4, rng);
  Tensor2 target = random_tensor(3, 2, rng);

  auto build = [&](Graph& g) {
    auto ra = g.leaf(a, "a");
    auto rb = g.leaf(b, "b");
    auto rbias = g.leaf(bias, "bias");
    auto rm = g.leaf(m, "m");
    auto rc = g.leaf(c, "c");
    auto masked = g.mul_rowvec(ra, rm, "masked");
    auto summed = g.add(masked, rc, "summed");
    auto act = g.tanh_map(g.scale(summed, 0.7, "scaled"), "act");
    auto mm = g.add_bias(g.matmul(act, rb, "mm"), rbias, "mm+b");
    return g.mse_to(mm, target, "loss");
  };
  std::vector<Tensor2*> leaves = {&a, &b, &bias, &m, &c};
  fd_check(
      leaves,
      [&] {
        Graph g;
        return g.scalar(build(g));
      },
      [&] {
        Graph g;
        g.backward(build(g));
      });
}

TEST_CASE("l2_normalize_rows and matmul_nt pass gradcheck") {
  Rng rng(52, "graph.fd2");
  Tensor2 h = random_tensor(4, 3, rng);
  Tensor2 c = random_tensor(5, 3, rng);
  Tensor2 target = random_tensor(4, 5, rng);
  auto build = [&](Graph& g) {
    auto rh = g.leaf(h, "h");
    auto rc = g.leaf(c, "c");
    auto nh = g.l2_normalize_rows(rh, "nh");
    auto nc = g.l2_normalize_rows(rc, "nc");
    return g.mse_to(g.matmul_nt(nh, nc, "sim"), target, "loss");
  };
  fd_check(
      {&h, &c},
      [&] {
        Graph g;
        return g.scalar(build(g));
      },
      [&] {
        Graph g;
        g.backward(build(g));
      });
}

TEST_CASE("softmax_nll with arbitrary soft targets passes gradcheck") {
  Rng rng(53, "graph.fd3");
  Tensor2 s = random_tensor(5, 5, rng, 2.0);
  Tensor2 w(5, 5);
  for (double& x : w.v) x = rng.uniform01() < 0.4 ? rng.uniform(0.0, 1.0) : 0.0;
  auto build = [&](Graph& g) {
    auto rs = g.leaf(s, "s");
    return g.softmax_nll(rs, w, "nll");
  };
  fd_check(
      {&s},
      [&] {
        Graph g;
        return g.scalar(build(g));
      },
      [&] {
        Graph g;
        g.backward(build(g));
      });
}

TEST_CASE("l1_sum, sum_all, and add_scaled pass gradcheck away from zero") {
  Rng rng(54, "graph.fd4");
  Tensor2 w(1, 8);
  for (double& x : w.v) x = rng.uniform(0.2, 1.5) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
  Tensor2 u = random_tensor(2, 3, rng);
  auto build = [&](Graph& g) {
    auto rw = g.leaf(w, "w");
    auto ru = g.leaf(u, "u");
    auto l1 = g.l1_sum(rw, "l1");
    auto s = g.sum_all(g.tanh_map(ru, "t"), "sum");
    return g.add_scaled(l1, s, 0.3, 1.7, "combo");
  };
  fd_check(
      {&w, &u},
      [&] {
        Graph g;
        return g.scalar(build(g));
      },
      [&] {
        Graph g;
        g.backward(build(g));
      });
}

TEST_CASE("l1_sum skips frozen entries and uses subgradient zero at zero") {
  Tensor2 w(1, 4);
  w.v = {0.5, 0.0, -0.25, 0.0};
  std::vector<std::uint8_t> frozen = {0, 0, 0, 1};
  Graph g;
  auto rw = g.leaf_frozen(w, frozen, "w");
  auto l1 = g.l1_sum(rw, "l1");
  CHECK(g.scalar(l1) == doctest::Approx(0.75));  // frozen |0| excluded either way
  g.backward(l1);
  CHECK(w.g[0] == 1.0);
  CHECK(w.g[1] == 0.0);  // subgradient at zero
  CHECK(w.g[2] == -1.0);
  CHECK(w.g[3] == 0.0);  // frozen
}

TEST_CASE("frozen leaf entries accumulate no gradient anywhere") {
  Rng rng(55, "graph.frozen");
  Tensor2 m = random_tensor(1, 6, rng);
  m.v[2] = 0.0;
  m.v[4] = 0.0;
  std::vector<std::uint8_t> frozen = {0, 0, 1, 0, 1, 0};
  Tensor2 x = random_tensor(3, 6, rng);
  Tensor2 target = random_tensor(3, 6, rng);
  auto build = [&](Graph& g) {
    auto rm = g.leaf_frozen(m, frozen, "m");
    auto rx = g.constant(x, "x");
    return g.mse_to(g.mul_rowvec(rx, rm, "masked"), target, "loss");
  };
  fd_check(
      {&m},
      [&] {
        Graph g;
        return g.scalar(build(g));
      },
      [&] {
        Graph g;
        g.backward(build(g));
      },
      1e-5, 1e-6, {&frozen});
}

TEST_CASE("bias gradient under sum_all equals the row count") {
  Rng rng(56, "graph.bias");
  Tensor2 x = random_tensor(7, 3, rng);
  Tensor2 b = random_tensor(1, 3, rng);
  b.ensure_grad();
  b.zero_grad();
  Graph g;
  auto out = g.sum_all(g.add_bias(g.constant(x, "x"), g.leaf(b, "b"), "xb"), "s");
  g.backward(out);
  for (double gb : b.g) CHECK(gb == doctest::Approx(7.0));
}

TEST_CASE("constants feed values but never gradients") {
  Rng rng(57, "graph.const");
  Tensor2 a = random_tensor(2, 3, rng);
  Tensor2 w = random_tensor(3, 2, rng);
  Tensor2 target = random_tensor(2, 2, rng);
  auto build = [&](Graph& g) {
    return g.mse_to(g.matmul(g.constant(a, "a"), g.leaf(w, "w"), "aw"), target, "loss");
  };
  fd_check(
      {&w},
      [&] {
        Graph g;
        return g.scalar(build(g));
      },
      [&] {
        Graph g;
        g.backward(build(g));
      });
}

TEST_CASE("whole model passes finite-difference gradcheck") {
  ModelDims dims;
  dims.d_model = 6;
  dims.d_embed = 4;
  dims.n_blocks = 2;
  Dims3 grid{2, 2, 2};
  ModelBundle bundle = init_params(99, dims, {grid});
  // Move the mask off all-ones so its gradient path is generic, and freeze one
  // entry the way stage 1 would.
  Rng rng(58, "graph.model");
  for (double& x : bundle.troi[0].mask.v) x = rng.uniform(0.1, 1.0);
  bundle.troi[0].mask.v[3] = 0.0;
  bundle.troi[0].mask_frozen[3] = 1;

  const int B = 3;
  Tensor2 x = random_tensor(B, grid.count(), rng);
  Tensor2 c(B, dims.d_embed);
  for (int i = 0; i < B; ++i) {
    double n2 = 0.0;
    for (int j = 0; j < dims.d_embed; ++j) {
      c.at(i, j) = rng.normal();
      n2 += c.at(i, j) * c.at(i, j);
    }
    for (int j = 0; j < dims.d_embed; ++j) c.at(i, j) /= std::sqrt(n2);
  }
  MixupBatch batch;
  batch.targets_a = {0, 1, 2};
  batch.targets_b = {1, 2, 0};
  batch.lambdas = {0.3, 0.8, 1.0};
  batch.inputs.resize(B);  // only the index/lambda fields matter to the losses

  LossConfig cfg;
  cfg.tau = 0.5;
  cfg.epsilon = 0.7;
  cfg.psi = 0.11;

  auto build = [&](Graph& g) {
    ForwardNodes f = model_forward(g, bundle, 0, x, true);
    auto clip = mixco_contrastive(g, f.h, c, batch, cfg.tau);
    auto prior = prior_mse(g, f.p, c, batch);
    auto l1 = l1_mask_penalty(g, f.mask_leaf);
    return total_loss(g, clip, prior, l1, cfg, Stage::stage1);
  };

  std::vector<Tensor2*> leaves;
  std::vector<const std::vector<std::uint8_t>*> skip;
  for (auto& p : bundle.params()) {
    leaves.push_back(p.t);
    skip.push_back(p.is_mask ? &bundle.troi[0].mask_frozen : nullptr);
  }
  fd_check(
      leaves,
      [&] {
        Graph g;
        return g.scalar(build(g));
      },
      [&] {
        Graph g;
        g.backward(build(g));
      },
      1e-5, 1e-5, skip);
}

TEST_CASE("model forward matches a hand-rolled dense computation") {
  ModelDims dims;
  dims.d_model = 5;
  dims.d_embed = 3;
  dims.n_blocks = 2;
  Dims3 grid{2, 2, 1};
  ModelBundle bundle = init_params(7, dims, {grid});
  Rng rng(59, "graph.fwdref");
  for (double& x : bundle.troi[0].mask.v) x = rng.uniform(0.2, 1.0);
  // Give the zero-initialized second linears real weights so the blocks act.
  for (ResidualBlock& blk : bundle.blocks)
    for (double& x : blk.lin2.w.v) x = rng.uniform(-0.3, 0.3);

  const int B = 4;
  Tensor2 x = random_tensor(B, grid.count(), rng);
  Graph g;
  ForwardNodes f = model_forward(g, bundle, 0, x, true);

  auto linear = [](const std::vector<double>& in, const LinearLayer& l) {
    std::vector<double> out(l.w.cols, 0.0);
    for (int j = 0; j < l.w.cols; ++j) {
      double s = l.b.v[j];
      for (int i = 0; i < l.w.rows; ++i) s += in[i] * l.w.at(i, j);
      out[j] = s;
    }
    return out;
  };
  for (int r = 0; r < B; ++r) {
    std::vector<double> in(grid.count());
    for (int i = 0; i < grid.count(); ++i) in[i] = x.at(r, i) * bundle.troi[0].mask.v[i];
    std::vector<double> z = linear(in, bundle.troi[0].linear);
    for (const ResidualBlock& blk : bundle.blocks) {
      std::vector<double> t = linear(z, blk.lin1);
      for (double& v : t) v = std::tanh(v);
      std::vector<double> u = linear(t, blk.lin2);
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += u[i];
    }
    std::vector<double> b = linear(z, bundle.backbone_out);
    std::vector<double> ph = linear(b, bundle.proj_hidden);
    for (double& v : ph) v = std::tanh(v);
    std::vector<double> h = linear(ph, bundle.proj_out);
    std::vector<double> rh = linear(b, bundle.prior_hidden);
    for (double& v : rh) v = std::tanh(v);
    std::vector<double> p = linear(rh, bundle.prior_out);
    for (int j = 0; j < dims.d_embed; ++j) {
      CHECK(g.value(f.b).at(r, j) == doctest::Approx(b[j]).epsilon(1e-12));
      CHECK(g.value(f.h).at(r, j) == doctest::Approx(h[j]).epsilon(1e-12));
      CHECK(g.value(f.p).at(r, j) == doctest::Approx(p[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("residual blocks are the identity at init") {
  ModelDims dims;
  dims.d_model = 5;
  dims.d_embed = 3;
  dims.n_blocks = 3;
  Dims3 grid{2, 2, 1};
  ModelBundle bundle = init_params(11, dims, {grid});
  Rng rng(60, "graph.ident");
  Tensor2 x = random_tensor(2, grid.count(), rng);
  Graph g;
  ForwardNodes f = model_forward(g, bundle, 0, x, false);
  // With identity blocks, b = (x W_in + b_in) W_out + b_out exactly.
  Tensor2 z = naive_matmul(x, bundle.troi[0].linear.w);
  Tensor2 b = naive_matmul(z, bundle.backbone_out.w);  // biases are zero at init
  for (std::size_t i = 0; i < b.v.size(); ++i)
    CHECK(g.value(f.b).v[i] == doctest::Approx(b.v[i]).epsilon(1e-12));
}

TEST_CASE("all-zero mask makes the output input-independent") {
  ModelDims dims;
  dims.d_model = 4;
  dims.d_embed = 2;
  dims.n_blocks = 1;
  Dims3 grid{2, 1, 2};
  ModelBundle bundle = init_params(13, dims, {grid});
  for (double& x : bundle.troi[0].mask.v) x = 0.0;
  Rng rng(61, "graph.zmask");
  Tensor2 x1 = random_tensor(2, grid.count(), rng);
  Tensor2 x2 = random_tensor(2, grid.count(), rng);
  Graph g1, g2;
  ForwardNodes f1 = model_forward(g1, bundle, 0, x1, true);
  ForwardNodes f2 = model_forward(g2, bundle, 0, x2, true);
  CHECK(g1.value(f1.h).v == g2.value(f2.h).v);
}

TEST_CASE("init_params is deterministic and respects layout") {
  ModelDims dims;
  ModelBundle a = init_params(5, dims, {Dims3{3, 3, 3}});
  ModelBundle b = init_params(5, dims, {Dims3{3, 3, 3}});
  ModelBundle c = init_params(6, dims, {Dims3{3, 3, 3}});
  CHECK(a.troi[0].linear.w.v == b.troi[0].linear.w.v);
  CHECK(a.troi[0].linear.w.v != c.troi[0].linear.w.v);
  for (double x : a.troi[0].mask.v) CHECK(x == 1.0);
  for (double x : a.blocks[0].lin2.w.v) CHECK(x == 0.0);
  for (double x : a.backbone_out.b.v) CHECK(x == 0.0);
  // fan-in scaling bound
  double s = std::sqrt(1.0 / a.troi[0].linear.w.rows);
  for (double x : a.troi[0].linear.w.v) CHECK(std::abs(x) <= s);
}

TEST_CASE("params enumeration is stable and complete") {
  ModelDims dims;
  dims.n_blocks = 2;
  ModelBundle m = init_params(1, dims, {Dims3{2, 2, 2}, Dims3{3, 1, 1}});
  auto ps = m.params();
  std::vector<std::string> names;
  for (auto& p : ps) names.push_back(p.name);
  std::vector<std::string> want = {
      "troi0.mask",   "troi0.linear.w", "troi0.linear.b",
      "troi1.mask",   "troi1.linear.w", "troi1.linear.b",
      "backbone.block0.lin1.w", "backbone.block0.lin1.b",
      "backbone.block0.lin2.w", "backbone.block0.lin2.b",
      "backbone.block1.lin1.w", "backbone.block1.lin1.b",
      "backbone.block1.lin2.w", "backbone.block1.lin2.b",
      "backbone.out.w", "backbone.out.b",
      "projector.hidden.w", "projector.hidden.b",
      "projector.out.w", "projector.out.b",
      "prior.hidden.w", "prior.hidden.b",
      "prior.out.w", "prior.out.b"};
  CHECK(names == want);
  CHECK(ps[0].is_mask);
  CHECK(!ps[1].is_mask);
}

TEST_CASE("zero-norm rows are rejected by l2_normalize_rows") {
  Tensor2 h(2, 3);
  h.v = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  Graph g;
  auto rh = g.leaf(h, "h");
  CHECK_THROWS_AS(g.l2_normalize_rows(rh, "nh"), std::runtime_error);
}

TEST_CASE("non-finite values are reported with the offending node's name") {
  // Leaves are checked at creation...
  Tensor2 bad(1, 2);
  bad.v = {1.0, std::numeric_limits<double>::infinity()};
  Graph g;
  bool threw = false;
  try {
    g.leaf(bad, "inputs");
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("inputs") != std::string::npos);
  }
  CHECK(threw);

  // ...and so is every op output (here an overflow to infinity).
  Tensor2 big(1, 1);
  big.v = {1e300};
  Graph g2;
  auto rb = g2.leaf(big, "big");
  threw = false;
  try {
    g2.scale(rb, 1e10, "doubled");
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("doubled") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("backward demands a scalar loss and a non-empty graph") {
  Graph g;
  CHECK_THROWS_AS(g.backward(Graph::NodeRef{}), std::runtime_error);
  Tensor2 a(2, 2, 1.0);
  Graph g2;
  auto ra = g2.leaf(a, "a");
  CHECK_THROWS(g2.backward(ra));  // 2x2, not scalar
}

TEST_CASE("shape mismatches are rejected at op creation") {
  Tensor2 a(2, 3, 1.0), b(2, 3, 1.0), m(1, 4, 1.0);
  Graph g;
  auto ra = g.leaf(a, "a"), rb = g.leaf(b, "b"), rm = g.leaf(m, "m");
  CHECK_THROWS_AS(g.matmul(ra, rb, "bad"), std::invalid_argument);
  CHECK_THROWS_AS(g.mul_rowvec(ra, rm, "bad"), std::invalid_argument);
  Tensor2 c(3, 3, 1.0);
  auto rc = g.leaf(c, "c");
  CHECK_THROWS_AS(g.add(ra, rc, "bad"), std::invalid_argument);
}

TEST_SUITE_END();
