// Run configuration: one JSON file drives the whole pipeline (generation,
// pretraining, mask selection, retraining, evaluation).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "troi/synth.hpp"
#include "troi/trainer.hpp"

namespace troi {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  ModelDims model;
  // Subject generation specs. The per-subject seed is not stored; it is
  // derived from the run seed and the subject index at generation time.
  std::vector<SyntheticSubjectSpec> subjects;
  int target_subject = 0;
  std::vector<int> pretrain_subjects;  // defaults to every subject but the target

  int batch_size = 24;
  CosineSchedule schedule;
  LossConfig loss;
  double mix_alpha = 0.2;
  double mix_beta = 0.2;
  TrainFlags trainable;

  Stage1Config stage1;
  std::string stage2_mode = "rewind";  // "rewind" or "finetune"

  int eval_n_candidates = 0;  // <= 0 means the whole test split
  int eval_two_way_passes = 10;

  void validate() const;
};

// Defaults sized for the bundled synthetic benchmark: five 20x20x20 subjects,
// one spherical ROI of about 500 voxels each, noise at snr 2.
RunConfig default_config();

// Subject spec with its derived generation seed filled in.
SyntheticSubjectSpec subject_spec_for(const RunConfig& cfg, int index);

// Training configuration shared by the pretrain and stage-2 phases.
TrainConfig train_config_for(const RunConfig& cfg);

std::string run_config_to_json_text(const RunConfig& cfg);
RunConfig run_config_from_json_text(const std::string& text);

void save_run_config(const std::string& path, const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

}  // namespace troi
