#pragma once

#include <cstdint>
#include <vector>

#include "troi/model.hpp"
#include "troi/tensor.hpp"

namespace troi {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam moments parallel to ModelBundle::params() order. The step counter is
// global, so bias correction is shared by all tensors.
struct OptimState {
  AdamConfig cfg;
  long step = 0;
  std::vector<std::vector<double>> m, v;

  void init_for(const std::vector<ModelBundle::ParamRef>& params);
  // One Adam update from the gradients currently held in each tensor's grad
  // buffer; trainable[i] == 0 skips tensor i (its moments stay untouched).
  void apply(const std::vector<ModelBundle::ParamRef>& params,
             const std::vector<std::uint8_t>& trainable, double lr);
};

struct CosineSchedule {
  int total_epochs = 150;
  int warmup_epochs = 5;
  double base_lr = 1e-3;
  double min_lr = 1e-5;

  void validate() const;
};

// Pure function of the epoch index: linear warmup to base_lr, then cosine
// decay hitting min_lr exactly at the final epoch. Out-of-range epochs are an
// error.
double lr_at(const CosineSchedule& s, int epoch);

}  // namespace troi
