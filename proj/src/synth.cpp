#include "troi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace troi {

namespace {

bool inside(const Ellipsoid& e, int ix, int iy, int iz) {
  double dx = (ix - e.cx) / e.rx;
  double dy = (iy - e.cy) / e.ry;
  double dz = (iz - e.cz) / e.rz;
  return dx * dx + dy * dy + dz * dz <= 1.0;
}

void check_ellipsoid(const Ellipsoid& e, const Dims3& d) {
  if (!(e.rx > 0 && e.ry > 0 && e.rz > 0))
    throw std::invalid_argument("generate_subject: ellipsoid radii must be positive");
  if (e.cx - e.rx < 0 || e.cx + e.rx > d.nx - 1 || e.cy - e.ry < 0 || e.cy + e.ry > d.ny - 1 ||
      e.cz - e.rz < 0 || e.cz + e.rz > d.nz - 1)
    throw std::invalid_argument("generate_subject: ellipsoid extends outside grid " + d.str());
}

}  // namespace

SyntheticSubject generate_subject(const SyntheticSubjectSpec& spec) {
  spec.dims.validate();
  if (spec.embed_dim < 1)
    throw std::invalid_argument("generate_subject: embed_dim must be >= 1");
  if (!(spec.snr > 0.0)) throw std::invalid_argument("generate_subject: snr must be positive");
  if (spec.n_samples < 1)
    throw std::invalid_argument("generate_subject: n_samples must be >= 1");
  if (spec.roi.empty()) throw std::invalid_argument("generate_subject: roi list is empty");
  if (!(spec.train_fraction >= 0.0 && spec.train_fraction <= 1.0))
    throw std::invalid_argument("generate_subject: train_fraction must be in [0, 1]");
  for (const Ellipsoid& e : spec.roi) check_ellipsoid(e, spec.dims);

  SyntheticSubject out;
  out.spec = spec;
  out.true_roi = BinaryMask::zeros(spec.dims);
  std::vector<int> roi_idx;
  for (int ix = 0; ix < spec.dims.nx; ++ix)
    for (int iy = 0; iy < spec.dims.ny; ++iy)
      for (int iz = 0; iz < spec.dims.nz; ++iz)
        for (const Ellipsoid& e : spec.roi)
          if (inside(e, ix, iy, iz)) {
            int idx = flat_index(spec.dims, ix, iy, iz);
            if (!out.true_roi.bits[idx]) {
              out.true_roi.bits[idx] = 1;
              roi_idx.push_back(idx);
            }
            break;
          }
  std::sort(roi_idx.begin(), roi_idx.end());
  int n_roi = static_cast<int>(roi_idx.size());
  if (n_roi == 0) throw std::invalid_argument("generate_subject: roi covers no lattice voxel");
  if (n_roi < spec.embed_dim)
    std::cerr << "warning: roi voxel count " << n_roi << " below embed_dim " << spec.embed_dim
              << "\n";

  // Unit-sphere embeddings.
  Rng r_embed(spec.seed, "synth.embed");
  out.samples.resize(spec.n_samples);
  for (Sample& s : out.samples) {
    s.embedding.resize(spec.embed_dim);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& e : s.embedding) {
        e = r_embed.normal();
        norm += e * e;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (double& e : s.embedding) e /= norm;
  }

  // Fixed linear stimulus-to-voxel map on ROI voxels.
  Rng r_map(spec.seed, "synth.map");
  out.forward_map = Tensor2(n_roi, spec.embed_dim);
  for (double& v : out.forward_map.v) v = r_map.normal();

  // Clean signal and its empirical std over all (sample, roi voxel) pairs.
  std::vector<double> clean(static_cast<std::size_t>(spec.n_samples) * n_roi);
  double sum = 0.0, sq = 0.0;
  for (int j = 0; j < spec.n_samples; ++j) {
    const std::vector<double>& c = out.samples[j].embedding;
    for (int r = 0; r < n_roi; ++r) {
      double s = 0.0;
      for (int d = 0; d < spec.embed_dim; ++d) s += out.forward_map.at(r, d) * c[d];
      clean[static_cast<std::size_t>(j) * n_roi + r] = s;
      sum += s;
      sq += s * s;
    }
  }
  double n_pairs = static_cast<double>(spec.n_samples) * n_roi;
  double var = sq / n_pairs - (sum / n_pairs) * (sum / n_pairs);
  double signal_std = std::sqrt(std::max(0.0, var));
  double noise_std = signal_std / spec.snr;

  // Noise on every voxel; signal only inside the ROI.
  Rng r_noise(spec.seed, "synth.noise");
  int n_vox = spec.dims.count();
  for (int j = 0; j < spec.n_samples; ++j) {
    Sample& s = out.samples[j];
    s.fmri = VoxelGrid::zeros(spec.dims);
    for (int v = 0; v < n_vox; ++v) s.fmri.values[v] = noise_std * r_noise.normal();
    for (int r = 0; r < n_roi; ++r)
      s.fmri.values[roi_idx[r]] += clean[static_cast<std::size_t>(j) * n_roi + r];
  }

  // Seeded permutation split.
  Rng r_split(spec.seed, "synth.split");
  std::vector<int> perm(spec.n_samples);
  std::iota(perm.begin(), perm.end(), 0);
  r_split.shuffle(perm);
  int n_train = static_cast<int>(std::ceil(spec.train_fraction * spec.n_samples));
  n_train = std::min(n_train, spec.n_samples);
  out.train_idx.assign(perm.begin(), perm.begin() + n_train);
  out.test_idx.assign(perm.begin() + n_train, perm.end());
  std::sort(out.train_idx.begin(), out.train_idx.end());
  std::sort(out.test_idx.begin(), out.test_idx.end());
  return out;
}

SyntheticSubject zscore(const SyntheticSubject& s) {
  if (s.train_idx.size() < 2)
    throw std::invalid_argument("zscore: needs >= 2 training samples, got " +
                                std::to_string(s.train_idx.size()));
  int n_vox = s.spec.dims.count();
  for (int idx : s.train_idx)
    if (idx < 0 || idx >= static_cast<int>(s.samples.size()))
      throw std::invalid_argument("zscore: train index out of range");

  std::vector<double> mean(n_vox, 0.0), var(n_vox, 0.0);
  double inv_n = 1.0 / static_cast<double>(s.train_idx.size());
  for (int idx : s.train_idx) {
    const std::vector<double>& f = s.samples[idx].fmri.values;
    for (int v = 0; v < n_vox; ++v) mean[v] += f[v];
  }
  for (int v = 0; v < n_vox; ++v) mean[v] *= inv_n;
  for (int idx : s.train_idx) {
    const std::vector<double>& f = s.samples[idx].fmri.values;
    for (int v = 0; v < n_vox; ++v) {
      double d = f[v] - mean[v];
      var[v] += d * d;
    }
  }
  std::vector<double> scale(n_vox);
  for (int v = 0; v < n_vox; ++v) {
    double sd = std::sqrt(var[v] * inv_n);
    scale[v] = sd < 1e-8 ? 1.0 : 1.0 / sd;  // degenerate voxel: center only
  }

  SyntheticSubject out = s;
  for (Sample& smp : out.samples)
    for (int v = 0; v < n_vox; ++v)
      smp.fmri.values[v] = (smp.fmri.values[v] - mean[v]) * scale[v];
  return out;
}

MixupBatch mixco_mix(const std::vector<VoxelGrid>& batch_x, double alpha, double beta, Rng& rng) {
  if (batch_x.empty()) throw std::invalid_argument("mixco_mix: empty batch");
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw std::invalid_argument("mixco_mix: alpha and beta must be positive");
  int B = static_cast<int>(batch_x.size());
  for (int j = 1; j < B; ++j)
    if (batch_x[j].dims != batch_x[0].dims)
      throw std::invalid_argument("mixco_mix: grid dimension mismatch " + batch_x[j].dims.str() +
                                  " vs " + batch_x[0].dims.str());

  MixupBatch out;
  out.alpha = alpha;
  out.beta = beta;
  out.inputs.reserve(B);
  for (int j = 0; j < B; ++j) {
    double lam = rng.beta(alpha, beta);
    int k = j;
    if (B > 1) {
      std::uint64_t pick = rng.below(static_cast<std::uint64_t>(B) - 1);
      k = static_cast<int>(pick) + (static_cast<int>(pick) >= j ? 1 : 0);
    }
    VoxelGrid mixed = batch_x[j];
    const VoxelGrid& other = batch_x[k];
    for (std::size_t i = 0; i < mixed.values.size(); ++i)
      mixed.values[i] = lam * mixed.values[i] + (1.0 - lam) * other.values[i];
    out.inputs.push_back(std::move(mixed));
    out.targets_a.push_back(j);
    out.targets_b.push_back(k);
    out.lambdas.push_back(lam);
  }
  return out;
}

MixupBatch mixco_mix(const std::vector<VoxelGrid>& batch_x, double alpha, double beta,
                     std::uint64_t rng_seed) {
  Rng rng(rng_seed, "mixco");
  return mixco_mix(batch_x, alpha, beta, rng);
}

MixupBatch plain_batch(const std::vector<VoxelGrid>& batch_x) {
  if (batch_x.empty()) throw std::invalid_argument("plain_batch: empty batch");
  int B = static_cast<int>(batch_x.size());
  MixupBatch out;
  out.inputs = batch_x;
  for (int j = 0; j < B; ++j) {
    out.targets_a.push_back(j);
    out.targets_b.push_back(B > 1 ? (j + 1) % B : j);  // weightless when lambda = 1
    out.lambdas.push_back(1.0);
  }
  return out;
}

}  // namespace troi
