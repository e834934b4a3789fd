#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "troi/tensor.hpp"

namespace troi {

// Reverse-mode tape over Tensor2. A graph is built fresh for every batch:
// leaves bind external parameter tensors (gradients accumulate into their
// grad buffers), constants own their values, ops record parents in creation
// order so the tape is already topologically sorted. Every op checks its
// output for non-finite values and reports the offending node by name.
class Graph {
 public:
  struct NodeRef {
    int id = -1;
  };

  // Leaf bound to external storage; backward accumulates into ext.g.
  NodeRef leaf(Tensor2& ext, const std::string& name);
  // Leaf whose listed entries never receive gradient (hard-threshold freeze).
  NodeRef leaf_frozen(Tensor2& ext, const std::vector<std::uint8_t>& frozen,
                      const std::string& name);
  // Owned constant; no gradient flows into it.
  NodeRef constant(Tensor2 value, const std::string& name);

  NodeRef matmul(NodeRef a, NodeRef b, const std::string& name);     // A[m,k] * B[k,n]
  NodeRef matmul_nt(NodeRef a, NodeRef b, const std::string& name);  // A[m,k] * B[n,k]^T
  NodeRef add_bias(NodeRef a, NodeRef bias_row, const std::string& name);
  NodeRef add(NodeRef a, NodeRef b, const std::string& name);
  NodeRef scale(NodeRef a, double s, const std::string& name);
  NodeRef tanh_map(NodeRef a, const std::string& name);
  // y[i,j] = x[i,j] * m[0,j]; the voxel-mask Hadamard broadcast over rows.
  NodeRef mul_rowvec(NodeRef x, NodeRef m, const std::string& name);
  // Row-wise x / ||x||; a zero-norm row is an error, not clamped.
  NodeRef l2_normalize_rows(NodeRef a, const std::string& name);
  // Scalar: -(1/(2B)) * sum_pq W[p,q] * (logsoftmax_row(S)[p,q] + logsoftmax_col(S)[p,q]).
  NodeRef softmax_nll(NodeRef s, Tensor2 weights, const std::string& name);
  // Scalar: (1/B) * sum of squared differences to a fixed target.
  NodeRef mse_to(NodeRef p, Tensor2 target, const std::string& name);
  // Scalar: sum |w_i| over entries not frozen in the leaf; subgradient 0 at 0.
  NodeRef l1_sum(NodeRef w, const std::string& name);
  NodeRef sum_all(NodeRef a, const std::string& name);
  // ca*a + cb*b elementwise (used to combine scalar loss terms).
  NodeRef add_scaled(NodeRef a, NodeRef b, double ca, double cb, const std::string& name);

  // Seeds d(loss)/d(loss) = 1 and walks the tape backwards. loss must be 1x1.
  void backward(NodeRef loss);

  const Tensor2& value(NodeRef n) const;
  // Gradient held at a node (valid after backward); for leaves this is the
  // amount accumulated into the bound tensor during this backward call.
  const Tensor2& grad_at(NodeRef n) const;
  double scalar(NodeRef n) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor2 own;             // value storage for non-leaf nodes
    Tensor2* ext = nullptr;  // external storage for leaves
    const std::vector<std::uint8_t>* frozen = nullptr;
    Tensor2 grad;
    std::vector<int> parents;
    int op = 0;
    double c0 = 0.0, c1 = 0.0;  // op constants (scale factors)
    Tensor2 aux;                // op payload (softmax weights, mse target)
    std::string name;

    const Tensor2& val() const { return ext ? *ext : own; }
  };

  enum Op {
    kLeaf,
    kConst,
    kMatmul,
    kMatmulNT,
    kAddBias,
    kAdd,
    kScale,
    kTanh,
    kMulRowvec,
    kL2NormRows,
    kSoftmaxNLL,
    kMse,
    kL1,
    kSumAll,
    kAddScaled,
  };

  Node& at(NodeRef n);
  const Node& at(NodeRef n) const;
  NodeRef push(Node n);
  void check_finite(const Node& n) const;

  std::vector<Node> nodes_;
};

}  // namespace troi
