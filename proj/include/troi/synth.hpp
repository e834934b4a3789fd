#pragma once

#include <cstdint>
#include <vector>

#include "troi/grid.hpp"
#include "troi/rng.hpp"
#include "troi/tensor.hpp"

namespace troi {

// Axis-aligned ellipsoid in voxel coordinates; membership is
// sum(((i - center) / radius)^2) <= 1 on the integer lattice.
struct Ellipsoid {
  double cx = 0, cy = 0, cz = 0;
  double rx = 1, ry = 1, rz = 1;
};

struct SyntheticSubjectSpec {
  Dims3 dims{20, 20, 20};
  int embed_dim = 16;
  std::vector<Ellipsoid> roi;
  double snr = 2.0;
  int n_samples = 400;
  double train_fraction = 0.75;
  std::uint64_t seed = 0;
};

struct Sample {
  VoxelGrid fmri;
  std::vector<double> embedding;  // unit norm at generation
};

// A synthetic subject: only voxels inside true_roi carry stimulus signal
// (forward_map * embedding); Gaussian noise with std = signal_std / snr is
// added to every voxel. forward_map is regenerated, not stored in files.
struct SyntheticSubject {
  SyntheticSubjectSpec spec;
  BinaryMask true_roi;
  Tensor2 forward_map;  // roi_voxels x embed_dim
  std::vector<Sample> samples;
  std::vector<int> train_idx, test_idx;
};

SyntheticSubject generate_subject(const SyntheticSubjectSpec& spec);

// Per-voxel z-score using train-split population statistics; voxels with
// train std < 1e-8 are centered only. Requires >= 2 training samples.
SyntheticSubject zscore(const SyntheticSubject& s);

// One MixCo-mixed batch: inputs[j] = lambda_j x_j + (1 - lambda_j) x_{k_j}.
struct MixupBatch {
  std::vector<VoxelGrid> inputs;
  std::vector<int> targets_a;      // j (batch-local)
  std::vector<int> targets_b;      // k_j (batch-local, != j when B > 1)
  std::vector<double> lambdas;     // Beta(alpha, beta) draws in [0, 1]
  double alpha = 0.2, beta = 0.2;

  int size() const { return static_cast<int>(inputs.size()); }
};

MixupBatch mixco_mix(const std::vector<VoxelGrid>& batch_x, double alpha, double beta, Rng& rng);
MixupBatch mixco_mix(const std::vector<VoxelGrid>& batch_x, double alpha, double beta,
                     std::uint64_t rng_seed);

// Identity batch (lambda = 1): inputs pass through, loss reduces to InfoNCE.
MixupBatch plain_batch(const std::vector<VoxelGrid>& batch_x);

}  // namespace troi
