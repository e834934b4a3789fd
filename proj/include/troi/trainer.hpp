#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "troi/grid.hpp"
#include "troi/loss.hpp"
#include "troi/model.hpp"
#include "troi/optim.hpp"
#include "troi/synth.hpp"

namespace troi {

// Per-component trainability of the shared trunk (all on by default; the
// stage-1/2 ablations can freeze pieces).
struct TrainFlags {
  bool backbone = true;
  bool projector = true;
  bool prior = true;
};

struct TrainConfig {
  int batch_size = 24;
  CosineSchedule schedule;  // pretraining and stage-2 rewinding share it
  LossConfig loss;
  double mix_alpha = 0.2, mix_beta = 0.2;
  std::uint64_t seed = 0;
  TrainFlags trainable;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double clip = 0, prior = 0, l1 = 0, total = 0;
  double lr = 0;
  int mask_nnz = 0;
  bool mixed = false;
  double wall_sec = 0;  // timing only; report files exclude it
};

struct TrainReport {
  std::string phase;
  std::vector<EpochRecord> epochs;
  // Stage-1 traces, indexed by while-loop iteration.
  std::vector<int> nnz_trace;           // nnz(mask) after each hard threshold
  std::vector<int> filtered_nnz_trace;  // nnz(binarize(filter(mask)))
  std::vector<double> psi_trace;
  int stage1_iterations = 0;
};

// Shared epoch loop for the schedule-driven phases. Subject i feeds troi
// layer i. Epochs before ceil(mix_stop_fraction * total) use MixCo batches
// (except stage 1, which always trains on unmixed batches). All per-epoch
// randomness is keyed by (seed, phase, epoch, subject), so resuming from
// from_epoch reproduces an uninterrupted run exactly.
void train_epochs(ModelBundle& bundle, OptimState& optim,
                  const std::vector<const SyntheticSubject*>& subjects, const TrainConfig& cfg,
                  Stage stage, int from_epoch, int to_epoch, const std::string& phase_tag,
                  TrainReport& report);

struct PretrainResult {
  ModelBundle bundle;
  OptimState optim;
  TrainReport report;
};

// Trains the shared trunk on the given subjects with all-ones (fixed) masks.
PretrainResult pretrain(const std::vector<const SyntheticSubject*>& subjects,
                        const ModelDims& dims, const TrainConfig& cfg);

struct Stage1Config {
  int budget_v = 600;       // V: voxel budget for the binarized mask
  double th = 0.05;         // hard/binarize threshold
  double psi0 = 3e-4;       // initial L1 coefficient
  double psi_growth = 1.5;  // escalation factor after a stall
  int epochs_per_iter = 1;
  int max_iters = 60;
  int stall_patience = 3;   // stalls tolerated before escalating psi
  double lr = 5e-3;         // constant stage-1 learning rate
  FilterConfig filter;
  bool filter_enabled = true;

  void validate() const;
};

struct Stage1Result {
  BinaryMask mask;     // first filtered+binarized mask meeting the budget
  ModelBundle bundle;  // stage-1-trained single-subject bundle
  TrainReport report;
};

// Sparse mask selection: train -> hard-threshold (freeze zeros) -> low-pass ->
// binarize, until the filtered mask fits the budget. Fresh input layer for
// the new subject; shared trunk warm-started from `pretrained`. Escalates psi
// when the filtered count stops shrinking; errors out at max_iters.
Stage1Result stage1_sparse_mask(const ModelBundle& pretrained, const SyntheticSubject& subject,
                                const Stage1Config& s1, const TrainConfig& cfg);

enum class Stage2Mode {
  rewind,    // re-init gathered input layer, warm trunk, full schedule from epoch 0
  finetune,  // keep stage-1 weights (mask folded in), constant min_lr continuation
};

struct Stage2Result {
  ModelBundle bundle;
  OptimState optim;
  TrainReport report;
};

// Retrains on the voxels selected by `mask`. In rewind mode `warm` is the
// pretrained bundle; in finetune mode it is the stage-1 bundle.
Stage2Result stage2_retrain(const ModelBundle& warm, const BinaryMask& mask,
                            const SyntheticSubject& subject, const TrainConfig& cfg,
                            Stage2Mode mode = Stage2Mode::rewind);

}  // namespace troi
