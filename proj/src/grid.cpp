#include "troi/grid.hpp"

#include <cmath>
#include <stdexcept>

namespace troi {

std::string Dims3::str() const {
  return std::to_string(nx) + "x" + std::to_string(ny) + "x" + std::to_string(nz);
}

void Dims3::validate() const {
  if (nx <= 0 || ny <= 0 || nz <= 0)
    throw std::invalid_argument("Dims3: all extents must be positive, got " + str());
}

void VoxelGrid::validate() const {
  dims.validate();
  if (static_cast<int>(values.size()) != dims.count())
    throw std::invalid_argument("VoxelGrid: values length " + std::to_string(values.size()) +
                                " does not match dims " + dims.str());
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("VoxelGrid: non-finite value");
}

int WeightedMask::nonzero_count() const {
  int n = 0;
  for (double w : weights) n += (w != 0.0);
  return n;
}

double WeightedMask::l1_norm() const {
  double s = 0.0;
  for (double w : weights) s += std::abs(w);
  return s;
}

void WeightedMask::validate() const {
  dims.validate();
  if (static_cast<int>(weights.size()) != dims.count())
    throw std::invalid_argument("WeightedMask: weights length " + std::to_string(weights.size()) +
                                " does not match dims " + dims.str());
  if (frozen.size() != weights.size())
    throw std::invalid_argument("WeightedMask: frozen length does not match weights");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i]) || weights[i] < 0.0)
      throw std::invalid_argument("WeightedMask: weights must be finite and nonnegative");
    if (frozen[i] && weights[i] != 0.0)
      throw std::invalid_argument("WeightedMask: frozen entry with nonzero weight at index " +
                                  std::to_string(i));
  }
}

int BinaryMask::nonzero_count() const {
  int n = 0;
  for (std::uint8_t b : bits) n += (b != 0);
  return n;
}

void BinaryMask::validate() const {
  dims.validate();
  if (static_cast<int>(bits.size()) != dims.count())
    throw std::invalid_argument("BinaryMask: bits length " + std::to_string(bits.size()) +
                                " does not match dims " + dims.str());
  for (std::uint8_t b : bits)
    if (b > 1) throw std::invalid_argument("BinaryMask: bits must be 0 or 1");
}

void FilterConfig::validate() const {
  if (!(sigma > 0.0)) throw std::invalid_argument("FilterConfig: sigma must be positive");
  int min_radius = static_cast<int>(std::ceil(2.0 * sigma));
  if (radius < min_radius)
    throw std::invalid_argument("FilterConfig: radius " + std::to_string(radius) +
                                " below required ceil(2*sigma) = " + std::to_string(min_radius));
}

namespace {

void require_same_dims(const Dims3& a, const Dims3& b, const char* what) {
  if (a != b)
    throw std::invalid_argument(std::string(what) + ": dimension mismatch " + a.str() + " vs " +
                                b.str());
}

// One renormalized blur pass along an axis. Denominators depend only on the
// position along the axis (the truncation window), so they are precomputed.
void blur_axis(std::vector<double>& vals, const Dims3& d, int axis,
               const std::vector<double>& kern, int radius) {
  int len, stride, n_outer, n_inner, outer_stride, inner_stride;
  // Lines along `axis` are enumerated by the two remaining coordinates.
  if (axis == 0) {
    len = d.nx;
    stride = d.ny * d.nz;
    n_outer = d.ny;
    outer_stride = d.nz;
    n_inner = d.nz;
    inner_stride = 1;
  } else if (axis == 1) {
    len = d.ny;
    stride = d.nz;
    n_outer = d.nx;
    outer_stride = d.ny * d.nz;
    n_inner = d.nz;
    inner_stride = 1;
  } else {
    len = d.nz;
    stride = 1;
    n_outer = d.nx;
    outer_stride = d.ny * d.nz;
    n_inner = d.ny;
    inner_stride = d.nz;
  }

  std::vector<double> denom(len);
  for (int p = 0; p < len; ++p) {
    double s = 0.0;
    for (int t = -radius; t <= radius; ++t) {
      int q = p + t;
      if (q >= 0 && q < len) s += kern[t + radius];
    }
    denom[p] = s;
  }

  std::vector<double> line(len);
  for (int o = 0; o < n_outer; ++o) {
    for (int i = 0; i < n_inner; ++i) {
      int base = o * outer_stride + i * inner_stride;
      for (int p = 0; p < len; ++p) line[p] = vals[base + p * stride];
      for (int p = 0; p < len; ++p) {
        double s = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          int q = p + t;
          if (q >= 0 && q < len) s += kern[t + radius] * line[q];
        }
        vals[base + p * stride] = s / denom[p];
      }
    }
  }
}

}  // namespace

VoxelGrid apply_mask(const VoxelGrid& x, const WeightedMask& m) {
  require_same_dims(x.dims, m.dims, "apply_mask");
  VoxelGrid out{x.dims, x.values};
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= m.weights[i];
  return out;
}

VoxelGrid apply_mask(const VoxelGrid& x, const BinaryMask& m) {
  require_same_dims(x.dims, m.dims, "apply_mask");
  VoxelGrid out{x.dims, x.values};
  for (std::size_t i = 0; i < out.values.size(); ++i)
    if (!m.bits[i]) out.values[i] = 0.0;
  return out;
}

WeightedMask gaussian_filter(const WeightedMask& m, const FilterConfig& cfg) {
  cfg.validate();
  m.dims.validate();
  std::vector<double> kern(2 * cfg.radius + 1);
  for (int t = -cfg.radius; t <= cfg.radius; ++t)
    kern[t + cfg.radius] = std::exp(-(static_cast<double>(t) * t) / (2.0 * cfg.sigma * cfg.sigma));

  WeightedMask out{m.dims, m.weights, std::vector<std::uint8_t>(m.weights.size(), 0)};
  for (int axis = 0; axis < 3; ++axis) blur_axis(out.weights, out.dims, axis, kern, cfg.radius);
  return out;
}

BinaryMask binarize(const WeightedMask& m, double th) {
  BinaryMask out{m.dims, std::vector<std::uint8_t>(m.weights.size(), 0)};
  for (std::size_t i = 0; i < m.weights.size(); ++i) out.bits[i] = m.weights[i] > th ? 1 : 0;
  return out;
}

void hard_threshold_in_place(WeightedMask& m, double th) {
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    if (m.weights[i] <= th) {
      m.weights[i] = 0.0;
      m.frozen[i] = 1;
    }
  }
}

OverlapStats mask_overlap(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a.dims, b.dims, "mask_overlap");
  long inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    na += a.bits[i] != 0;
    nb += b.bits[i] != 0;
    inter += (a.bits[i] != 0 && b.bits[i] != 0);
  }
  long uni = na + nb - inter;
  OverlapStats s;
  s.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  s.precision = na == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(na);
  s.recall = nb == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(nb);
  return s;
}

}  // namespace troi
