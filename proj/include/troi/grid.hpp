#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace troi {

struct Dims3 {
  int nx = 0, ny = 0, nz = 0;

  int count() const { return nx * ny * nz; }
  bool operator==(const Dims3& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }
  bool operator!=(const Dims3& o) const { return !(*this == o); }
  std::string str() const;
  void validate() const;  // throws unless all extents positive
};

// Flattening is row-major with x slowest: index = (ix*ny + iy)*nz + iz.
inline int flat_index(const Dims3& d, int ix, int iy, int iz) {
  return (ix * d.ny + iy) * d.nz + iz;
}

// One fMRI-like volume. Values are finite doubles.
struct VoxelGrid {
  Dims3 dims;
  std::vector<double> values;

  static VoxelGrid zeros(const Dims3& d) { return VoxelGrid{d, std::vector<double>(d.count(), 0.0)}; }
  double& at(int ix, int iy, int iz) { return values[flat_index(dims, ix, iy, iz)]; }
  double at(int ix, int iy, int iz) const { return values[flat_index(dims, ix, iy, iz)]; }
  void validate() const;  // size matches dims, all values finite
};

// Trainable voxel mask. frozen[i] marks entries pinned at zero by the
// hard-threshold step; frozen implies weight 0 and zero gradient.
struct WeightedMask {
  Dims3 dims;
  std::vector<double> weights;
  std::vector<std::uint8_t> frozen;

  static WeightedMask ones(const Dims3& d) {
    return WeightedMask{d, std::vector<double>(d.count(), 1.0),
                        std::vector<std::uint8_t>(d.count(), 0)};
  }
  int nonzero_count() const;
  double l1_norm() const;
  void validate() const;  // sizes match, weights >= 0 and finite, frozen => 0
};

struct BinaryMask {
  Dims3 dims;
  std::vector<std::uint8_t> bits;  // values in {0, 1}

  static BinaryMask zeros(const Dims3& d) {
    return BinaryMask{d, std::vector<std::uint8_t>(d.count(), 0)};
  }
  int nonzero_count() const;
  void validate() const;
};

// Truncated spatial Gaussian: taps exp(-t^2 / (2 sigma^2)) for t in [-radius, radius],
// renormalized per voxel over the in-bounds taps.
struct FilterConfig {
  double sigma = 1.0;
  int radius = 3;

  void validate() const;  // sigma > 0, radius >= ceil(2*sigma)
};

struct OverlapStats {
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Voxel-wise product x .* m. Dimension mismatch is an error naming both dims.
VoxelGrid apply_mask(const VoxelGrid& x, const WeightedMask& m);
VoxelGrid apply_mask(const VoxelGrid& x, const BinaryMask& m);

// Separable 3D low-pass. Because the kernel is box-truncated, per-axis
// renormalized passes reproduce the direct renormalized 3D convolution
// exactly. Output frozen flags are all false.
WeightedMask gaussian_filter(const WeightedMask& m, const FilterConfig& cfg);

// bits[i] = weights[i] > th (strict).
BinaryMask binarize(const WeightedMask& m, double th);

// Entries <= th are set to 0 and frozen; surviving entries are untouched.
void hard_threshold_in_place(WeightedMask& m, double th);

// iou = inter/union; precision = inter/|a|; recall = inter/|b|.
// Empty-over-empty IoU is 1; empty denominators elsewhere give 0.
OverlapStats mask_overlap(const BinaryMask& a, const BinaryMask& b);

}  // namespace troi
