#include "troi/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "troi/parallel.hpp"

namespace troi {

namespace {

// C = A*B (or += with acc). ikj order streams B rows; zero entries of A are
// skipped, which pays off once the mask has sparsified the batch.
void mm_ab(const Tensor2& A, const Tensor2& B, Tensor2& C, bool acc) {
  int m = A.rows, k = A.cols, n = B.cols;
  parallel_rows(m, [&](int r0, int r1) {
    for (int i = r0; i < r1; ++i) {
      double* crow = &C.v[static_cast<std::size_t>(i) * n];
      if (!acc)
        for (int j = 0; j < n; ++j) crow[j] = 0.0;
      const double* arow = &A.v[static_cast<std::size_t>(i) * k];
      for (int kk = 0; kk < k; ++kk) {
        double a = arow[kk];
        if (a == 0.0) continue;
        const double* brow = &B.v[static_cast<std::size_t>(kk) * n];
        for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
    }
  });
}

// C = A*B^T (or +=). Row-dot form; both operands stream by rows.
void mm_abt(const Tensor2& A, const Tensor2& B, Tensor2& C, bool acc) {
  int m = A.rows, k = A.cols, n = B.rows;
  parallel_rows(m, [&](int r0, int r1) {
    for (int i = r0; i < r1; ++i) {
      const double* arow = &A.v[static_cast<std::size_t>(i) * k];
      double* crow = &C.v[static_cast<std::size_t>(i) * n];
      for (int j = 0; j < n; ++j) {
        const double* brow = &B.v[static_cast<std::size_t>(j) * k];
        double s = 0.0;
        for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
        crow[j] = acc ? crow[j] + s : s;
      }
    }
  });
}

// C = A^T*B (or +=), A[m,k] B[m,n] C[k,n]. Per-element add order is ascending
// in m on both paths, so single- and multi-thread results match bitwise.
void mm_atb(const Tensor2& A, const Tensor2& B, Tensor2& C, bool acc) {
  int m = A.rows, k = A.cols, n = B.cols;
  if (!acc) C.v.assign(C.v.size(), 0.0);
  if (thread_count() <= 1 || k < 64) {
    for (int i = 0; i < m; ++i) {
      const double* arow = &A.v[static_cast<std::size_t>(i) * k];
      const double* brow = &B.v[static_cast<std::size_t>(i) * n];
      for (int kk = 0; kk < k; ++kk) {
        double a = arow[kk];
        if (a == 0.0) continue;
        double* crow = &C.v[static_cast<std::size_t>(kk) * n];
        for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
    }
    return;
  }
  parallel_rows(k, [&](int k0, int k1) {
    for (int i = 0; i < m; ++i) {
      const double* arow = &A.v[static_cast<std::size_t>(i) * k];
      const double* brow = &B.v[static_cast<std::size_t>(i) * n];
      for (int kk = k0; kk < k1; ++kk) {
        double a = arow[kk];
        if (a == 0.0) continue;
        double* crow = &C.v[static_cast<std::size_t>(kk) * n];
        for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
    }
  });
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Graph::Node& Graph::at(NodeRef n) {
  if (n.id < 0 || n.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("Graph: invalid node reference");
  return nodes_[n.id];
}

const Graph::Node& Graph::at(NodeRef n) const {
  if (n.id < 0 || n.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("Graph: invalid node reference");
  return nodes_[n.id];
}

Graph::NodeRef Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return NodeRef{static_cast<int>(nodes_.size()) - 1};
}

void Graph::check_finite(const Node& n) const {
  for (double x : n.val().v)
    if (!std::isfinite(x)) throw std::runtime_error("non-finite value in " + n.name);
}

const Tensor2& Graph::value(NodeRef n) const { return at(n).val(); }

const Tensor2& Graph::grad_at(NodeRef n) const { return at(n).grad; }

double Graph::scalar(NodeRef n) const {
  const Tensor2& t = at(n).val();
  require(t.rows == 1 && t.cols == 1, "Graph::scalar: node " + at(n).name + " is not 1x1");
  return t.v[0];
}

Graph::NodeRef Graph::leaf(Tensor2& ext, const std::string& name) {
  Node n;
  n.ext = &ext;
  n.op = kLeaf;
  n.name = name;
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::leaf_frozen(Tensor2& ext, const std::vector<std::uint8_t>& frozen,
                                  const std::string& name) {
  require(frozen.size() == ext.size(), "Graph::leaf_frozen: frozen size mismatch in " + name);
  Node n;
  n.ext = &ext;
  n.frozen = &frozen;
  n.op = kLeaf;
  n.name = name;
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::constant(Tensor2 value, const std::string& name) {
  Node n;
  n.own = std::move(value);
  n.op = kConst;
  n.name = name;
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::matmul(NodeRef a, NodeRef b, const std::string& name) {
  const Tensor2& A = at(a).val();
  const Tensor2& B = at(b).val();
  require(A.cols == B.rows, "matmul " + name + ": inner dimension mismatch " + A.shape_str() +
                                " vs " + B.shape_str());
  Node n;
  n.op = kMatmul;
  n.parents = {a.id, b.id};
  n.name = name;
  n.own = Tensor2(A.rows, B.cols);
  mm_ab(A, B, n.own, false);
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::matmul_nt(NodeRef a, NodeRef b, const std::string& name) {
  const Tensor2& A = at(a).val();
  const Tensor2& B = at(b).val();
  require(A.cols == B.cols, "matmul_nt " + name + ": inner dimension mismatch " + A.shape_str() +
                                " vs " + B.shape_str());
  Node n;
  n.op = kMatmulNT;
  n.parents = {a.id, b.id};
  n.name = name;
  n.own = Tensor2(A.rows, B.rows);
  mm_abt(A, B, n.own, false);
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::add_bias(NodeRef a, NodeRef bias_row, const std::string& name) {
  const Tensor2& A = at(a).val();
  const Tensor2& b = at(bias_row).val();
  require(b.rows == 1 && b.cols == A.cols,
          "add_bias " + name + ": bias shape " + b.shape_str() + " vs input " + A.shape_str());
  Node n;
  n.op = kAddBias;
  n.parents = {a.id, bias_row.id};
  n.name = name;
  n.own = A;
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) n.own.at(i, j) += b.v[j];
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::add(NodeRef a, NodeRef b, const std::string& name) {
  const Tensor2& A = at(a).val();
  const Tensor2& B = at(b).val();
  require(A.rows == B.rows && A.cols == B.cols,
          "add " + name + ": shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.op = kAdd;
  n.parents = {a.id, b.id};
  n.name = name;
  n.own = A;
  for (std::size_t i = 0; i < n.own.size(); ++i) n.own.v[i] += B.v[i];
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::scale(NodeRef a, double s, const std::string& name) {
  Node n;
  n.op = kScale;
  n.parents = {a.id};
  n.c0 = s;
  n.name = name;
  n.own = at(a).val();
  for (double& x : n.own.v) x *= s;
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::tanh_map(NodeRef a, const std::string& name) {
  Node n;
  n.op = kTanh;
  n.parents = {a.id};
  n.name = name;
  n.own = at(a).val();
  for (double& x : n.own.v) x = std::tanh(x);
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::mul_rowvec(NodeRef x, NodeRef m, const std::string& name) {
  const Tensor2& X = at(x).val();
  const Tensor2& M = at(m).val();
  require(M.rows == 1 && M.cols == X.cols,
          "mul_rowvec " + name + ": mask shape " + M.shape_str() + " vs input " + X.shape_str());
  Node n;
  n.op = kMulRowvec;
  n.parents = {x.id, m.id};
  n.name = name;
  n.own = X;
  for (int i = 0; i < X.rows; ++i)
    for (int j = 0; j < X.cols; ++j) n.own.at(i, j) *= M.v[j];
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::l2_normalize_rows(NodeRef a, const std::string& name) {
  const Tensor2& A = at(a).val();
  Node n;
  n.op = kL2NormRows;
  n.parents = {a.id};
  n.name = name;
  n.own = A;
  n.aux = Tensor2(A.rows, 1);
  for (int i = 0; i < A.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < A.cols; ++j) s += A.at(i, j) * A.at(i, j);
    double norm = std::sqrt(s);
    if (norm == 0.0)
      throw std::runtime_error("l2_normalize_rows " + name + ": zero-norm row " +
                               std::to_string(i));
    n.aux.v[i] = norm;
    for (int j = 0; j < A.cols; ++j) n.own.at(i, j) /= norm;
  }
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::softmax_nll(NodeRef s, Tensor2 weights, const std::string& name) {
  const Tensor2& S = at(s).val();
  require(weights.rows == S.rows && weights.cols == S.cols,
          "softmax_nll " + name + ": weight shape " + weights.shape_str() + " vs scores " +
              S.shape_str());
  require(S.rows >= 1 && S.cols >= 1, "softmax_nll " + name + ": empty scores");
  int B = S.rows, C = S.cols;
  double total = 0.0;
  // Row log-softmax term.
  for (int p = 0; p < B; ++p) {
    double mx = S.at(p, 0);
    for (int q = 1; q < C; ++q) mx = std::max(mx, S.at(p, q));
    double lse = 0.0;
    for (int q = 0; q < C; ++q) lse += std::exp(S.at(p, q) - mx);
    lse = mx + std::log(lse);
    for (int q = 0; q < C; ++q) total += weights.at(p, q) * (S.at(p, q) - lse);
  }
  // Column log-softmax term.
  for (int q = 0; q < C; ++q) {
    double mx = S.at(0, q);
    for (int p = 1; p < B; ++p) mx = std::max(mx, S.at(p, q));
    double lse = 0.0;
    for (int p = 0; p < B; ++p) lse += std::exp(S.at(p, q) - mx);
    lse = mx + std::log(lse);
    for (int p = 0; p < B; ++p) total += weights.at(p, q) * (S.at(p, q) - lse);
  }
  Node n;
  n.op = kSoftmaxNLL;
  n.parents = {s.id};
  n.name = name;
  n.aux = std::move(weights);
  n.own = Tensor2(1, 1);
  n.own.v[0] = -total / (2.0 * B);
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::mse_to(NodeRef p, Tensor2 target, const std::string& name) {
  const Tensor2& P = at(p).val();
  require(target.rows == P.rows && target.cols == P.cols,
          "mse_to " + name + ": target shape " + target.shape_str() + " vs prediction " +
              P.shape_str());
  require(P.rows >= 1, "mse_to " + name + ": empty prediction");
  Node n;
  n.op = kMse;
  n.parents = {p.id};
  n.name = name;
  n.aux = std::move(target);
  n.own = Tensor2(1, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    double d = P.v[i] - n.aux.v[i];
    s += d * d;
  }
  n.own.v[0] = s / P.rows;
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::l1_sum(NodeRef w, const std::string& name) {
  const Node& src = at(w);
  const Tensor2& W = src.val();
  Node n;
  n.op = kL1;
  n.parents = {w.id};
  n.name = name;
  n.own = Tensor2(1, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < W.size(); ++i) {
    if (src.frozen && (*src.frozen)[i]) continue;
    s += std::abs(W.v[i]);
  }
  n.own.v[0] = s;
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::sum_all(NodeRef a, const std::string& name) {
  const Tensor2& A = at(a).val();
  Node n;
  n.op = kSumAll;
  n.parents = {a.id};
  n.name = name;
  n.own = Tensor2(1, 1);
  double s = 0.0;
  for (double x : A.v) s += x;
  n.own.v[0] = s;
  check_finite(n);
  return push(std::move(n));
}

Graph::NodeRef Graph::add_scaled(NodeRef a, NodeRef b, double ca, double cb,
                                 const std::string& name) {
  const Tensor2& A = at(a).val();
  const Tensor2& B = at(b).val();
  require(A.rows == B.rows && A.cols == B.cols,
          "add_scaled " + name + ": shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.op = kAddScaled;
  n.parents = {a.id, b.id};
  n.c0 = ca;
  n.c1 = cb;
  n.name = name;
  n.own = Tensor2(A.rows, A.cols);
  for (std::size_t i = 0; i < n.own.size(); ++i) n.own.v[i] = ca * A.v[i] + cb * B.v[i];
  check_finite(n);
  return push(std::move(n));
}

void Graph::backward(NodeRef loss) {
  if (nodes_.empty()) throw std::runtime_error("Graph::backward called before any forward op");
  Node& top = at(loss);
  if (top.val().rows != 1 || top.val().cols != 1)
    throw std::invalid_argument("Graph::backward: loss node " + top.name + " is not 1x1");

  // Tape order is topological; only nodes that can reach a leaf need grads.
  std::vector<std::uint8_t> needs(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == kLeaf) {
      needs[i] = 1;
      continue;
    }
    for (int p : nodes_[i].parents)
      if (needs[p]) needs[i] = 1;
  }

  for (Node& n : nodes_) n.grad = Tensor2();
  auto touch = [&](int id) -> Tensor2& {
    Node& n = nodes_[id];
    if (n.grad.v.empty()) n.grad = Tensor2(n.val().rows, n.val().cols);
    return n.grad;
  };
  touch(loss.id).v[0] = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.v.empty()) continue;
    const Tensor2& G = n.grad;
    switch (n.op) {
      case kLeaf: {
        n.ext->ensure_grad();
        if (n.frozen) {
          for (std::size_t i = 0; i < G.size(); ++i)
            if (!(*n.frozen)[i]) n.ext->g[i] += G.v[i];
        } else {
          for (std::size_t i = 0; i < G.size(); ++i) n.ext->g[i] += G.v[i];
        }
        break;
      }
      case kConst:
        break;
      case kMatmul: {
        int pa = n.parents[0], pb = n.parents[1];
        if (needs[pa]) mm_abt(G, nodes_[pb].val(), touch(pa), true);
        if (needs[pb]) mm_atb(nodes_[pa].val(), G, touch(pb), true);
        break;
      }
      case kMatmulNT: {
        int pa = n.parents[0], pb = n.parents[1];
        if (needs[pa]) mm_ab(G, nodes_[pb].val(), touch(pa), true);
        if (needs[pb]) mm_atb(G, nodes_[pa].val(), touch(pb), true);
        break;
      }
      case kAddBias: {
        int pa = n.parents[0], pb = n.parents[1];
        if (needs[pa]) {
          Tensor2& da = touch(pa);
          for (std::size_t i = 0; i < G.size(); ++i) da.v[i] += G.v[i];
        }
        if (needs[pb]) {
          Tensor2& db = touch(pb);
          for (int i = 0; i < G.rows; ++i)
            for (int j = 0; j < G.cols; ++j) db.v[j] += G.at(i, j);
        }
        break;
      }
      case kAdd: {
        for (int side = 0; side < 2; ++side) {
          int p = n.parents[side];
          if (!needs[p]) continue;
          Tensor2& dp = touch(p);
          for (std::size_t i = 0; i < G.size(); ++i) dp.v[i] += G.v[i];
        }
        break;
      }
      case kScale: {
        int p = n.parents[0];
        if (needs[p]) {
          Tensor2& dp = touch(p);
          for (std::size_t i = 0; i < G.size(); ++i) dp.v[i] += n.c0 * G.v[i];
        }
        break;
      }
      case kTanh: {
        int p = n.parents[0];
        if (needs[p]) {
          Tensor2& dp = touch(p);
          const Tensor2& Y = n.own;
          for (std::size_t i = 0; i < G.size(); ++i) dp.v[i] += (1.0 - Y.v[i] * Y.v[i]) * G.v[i];
        }
        break;
      }
      case kMulRowvec: {
        int px = n.parents[0], pm = n.parents[1];
        const Tensor2& X = nodes_[px].val();
        const Tensor2& M = nodes_[pm].val();
        if (needs[px]) {
          Tensor2& dx = touch(px);
          for (int i = 0; i < G.rows; ++i)
            for (int j = 0; j < G.cols; ++j) dx.at(i, j) += G.at(i, j) * M.v[j];
        }
        if (needs[pm]) {
          Tensor2& dm = touch(pm);
          for (int i = 0; i < G.rows; ++i)
            for (int j = 0; j < G.cols; ++j) dm.v[j] += G.at(i, j) * X.at(i, j);
        }
        break;
      }
      case kL2NormRows: {
        int p = n.parents[0];
        if (needs[p]) {
          Tensor2& dx = touch(p);
          const Tensor2& Y = n.own;
          for (int i = 0; i < G.rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < G.cols; ++j) dot += G.at(i, j) * Y.at(i, j);
            double inv = 1.0 / n.aux.v[i];
            for (int j = 0; j < G.cols; ++j)
              dx.at(i, j) += (G.at(i, j) - Y.at(i, j) * dot) * inv;
          }
        }
        break;
      }
      case kSoftmaxNLL: {
        int p = n.parents[0];
        if (!needs[p]) break;
        const Tensor2& S = nodes_[p].val();
        const Tensor2& W = n.aux;
        int B = S.rows, C = S.cols;
        Tensor2& ds = touch(p);
        double gscale = G.v[0] / (2.0 * B);
        // d/dS = (1/2B) * (rowsum_p * Prow + colsum_q * Pcol - 2 W)
        std::vector<double> rowsum(B, 0.0), colsum(C, 0.0);
        for (int i = 0; i < B; ++i)
          for (int j = 0; j < C; ++j) {
            rowsum[i] += W.at(i, j);
            colsum[j] += W.at(i, j);
          }
        for (int i = 0; i < B; ++i) {
          double mx = S.at(i, 0);
          for (int j = 1; j < C; ++j) mx = std::max(mx, S.at(i, j));
          double z = 0.0;
          for (int j = 0; j < C; ++j) z += std::exp(S.at(i, j) - mx);
          for (int j = 0; j < C; ++j)
            ds.at(i, j) += gscale * (rowsum[i] * std::exp(S.at(i, j) - mx) / z - W.at(i, j));
        }
        for (int j = 0; j < C; ++j) {
          double mx = S.at(0, j);
          for (int i = 1; i < B; ++i) mx = std::max(mx, S.at(i, j));
          double z = 0.0;
          for (int i = 0; i < B; ++i) z += std::exp(S.at(i, j) - mx);
          for (int i = 0; i < B; ++i)
            ds.at(i, j) += gscale * (colsum[j] * std::exp(S.at(i, j) - mx) / z - W.at(i, j));
        }
        break;
      }
      case kMse: {
        int p = n.parents[0];
        if (needs[p]) {
          Tensor2& dp = touch(p);
          const Tensor2& P = nodes_[p].val();
          double c = 2.0 * G.v[0] / P.rows;
          for (std::size_t i = 0; i < P.size(); ++i) dp.v[i] += c * (P.v[i] - n.aux.v[i]);
        }
        break;
      }
      case kL1: {
        int p = n.parents[0];
        if (!needs[p]) break;
        Tensor2& dp = touch(p);
        const Node& src = nodes_[p];
        const Tensor2& W = src.val();
        for (std::size_t i = 0; i < W.size(); ++i) {
          if (src.frozen && (*src.frozen)[i]) continue;
          if (W.v[i] > 0.0)
            dp.v[i] += G.v[0];
          else if (W.v[i] < 0.0)
            dp.v[i] -= G.v[0];
        }
        break;
      }
      case kSumAll: {
        int p = n.parents[0];
        if (needs[p]) {
          Tensor2& dp = touch(p);
          for (double& x : dp.v) x += G.v[0];
        }
        break;
      }
      case kAddScaled: {
        int pa = n.parents[0], pb = n.parents[1];
        if (needs[pa]) {
          Tensor2& da = touch(pa);
          for (std::size_t i = 0; i < G.size(); ++i) da.v[i] += n.c0 * G.v[i];
        }
        if (needs[pb]) {
          Tensor2& db = touch(pb);
          for (std::size_t i = 0; i < G.size(); ++i) db.v[i] += n.c1 * G.v[i];
        }
        break;
      }
    }
  }
}

}  // namespace troi
