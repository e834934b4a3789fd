#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "troi/graph.hpp"
#include "troi/grid.hpp"
#include "troi/tensor.hpp"

namespace troi {

struct ModelDims {
  int d_model = 64;
  int d_embed = 16;
  int n_blocks = 2;

  void validate() const;
};

struct LinearLayer {
  Tensor2 w;  // fan_in x fan_out
  Tensor2 b;  // 1 x fan_out
};

// x + lin2(tanh(lin1(x))); lin2 starts at zero so the block is the identity
// map at init.
struct ResidualBlock {
  LinearLayer lin1, lin2;
};

// Subject-specific input layer. Dense mode multiplies the full grid by a
// weighted mask before the linear map; gathered mode keeps only the voxels
// selected by a binary mask and its linear map is sized to them.
struct TroiInput {
  Dims3 grid_dims;
  Tensor2 mask;  // 1 x n_vox weights; dense mode only
  std::vector<std::uint8_t> mask_frozen;
  BinaryMask binary_mask;    // gathered mode only
  std::vector<int> gather;   // sorted voxel indices; empty = dense mode
  LinearLayer linear;

  bool gathered() const { return !gather.empty(); }
  int input_width() const { return gathered() ? static_cast<int>(gather.size()) : grid_dims.count(); }
  WeightedMask mask_as_weighted() const;
  void set_mask(const WeightedMask& m);
};

// Shared trunk plus per-subject input layers. backbone maps d_model -> d_embed
// after the residual blocks; projector and prior both read the backbone
// embedding b: h = proj(b) feeds the contrastive loss, p = prior(b) regresses
// the target embedding directly.
struct ModelBundle {
  ModelDims dims;
  std::vector<TroiInput> troi;
  std::vector<ResidualBlock> blocks;
  LinearLayer backbone_out;   // d_model x d_embed
  LinearLayer proj_hidden;    // d_embed x d_embed
  LinearLayer proj_out;       // d_embed x d_embed
  LinearLayer prior_hidden;   // d_embed x 2*d_embed
  LinearLayer prior_out;      // 2*d_embed x d_embed

  struct ParamRef {
    std::string name;
    Tensor2* t;
    bool is_mask;
  };
  // Stable enumeration of every tensor (masks included); checkpoint and
  // optimizer state follow this order.
  std::vector<ParamRef> params();
};

// Uniform(-s, s) weights with s = sqrt(1/fan_in) when fan_in_scaled (s = 0.05
// otherwise), zero biases, zeroed second linear in each block, all-ones masks.
ModelBundle init_params(std::uint64_t seed, const ModelDims& dims,
                        const std::vector<Dims3>& subject_grids, bool fan_in_scaled = true);

struct ForwardNodes {
  Graph::NodeRef b;          // backbone embedding, B x d_embed
  Graph::NodeRef h;          // projector output, B x d_embed
  Graph::NodeRef p;          // prior output, B x d_embed
  Graph::NodeRef mask_leaf;  // valid iff mask_grad was requested
};

// Builds the forward graph for one batch. x is B x input_width of troi[subj].
// mask_grad wires the dense mask in as a trainable (frozen-aware) leaf;
// otherwise an all-ones mask is skipped entirely and any other fixed mask is
// applied as a constant.
ForwardNodes model_forward(Graph& g, ModelBundle& m, int subj, const Tensor2& x, bool mask_grad);

}  // namespace troi
