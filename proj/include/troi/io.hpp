#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include "troi/eval.hpp"
#include "troi/grid.hpp"
#include "troi/model.hpp"
#include "troi/optim.hpp"
#include "troi/synth.hpp"
#include "troi/trainer.hpp"

namespace troi {

// All files are JSON (masks, subjects, checkpoints, train reports) except the
// flat key-value metrics report and the PGM slice exports. Doubles are
// serialized with shortest round-trip formatting, so save/load is exact and
// identical runs produce byte-identical files.

void save_mask(const std::string& path, const WeightedMask& m);
void save_mask(const std::string& path, const BinaryMask& m);
using LoadedMask = std::variant<WeightedMask, BinaryMask>;
LoadedMask load_mask(const std::string& path);

// One P5 file per z-slice, named <prefix>_z<NNN>.pgm; pixel = 255 * weight /
// max weight over the whole volume (all zeros stay black). Rows are x lines,
// columns are y.
void export_pgm_slices(const Dims3& dims, const std::vector<double>& weights,
                       const std::string& dir, const std::string& prefix);
void export_pgm_slices(const WeightedMask& m, const std::string& dir, const std::string& prefix);
void export_pgm_slices(const BinaryMask& m, const std::string& dir, const std::string& prefix);

void save_subject(const std::string& path, const SyntheticSubject& s);
// forward_map is not stored; the loaded subject has an empty one.
SyntheticSubject load_subject(const std::string& path);

struct Checkpoint {
  ModelBundle bundle;
  OptimState optim;
  int epoch = 0;
  std::uint64_t run_seed = 0;
};

void save_checkpoint(const std::string& path, const ModelBundle& bundle, const OptimState& optim,
                     int epoch, std::uint64_t run_seed);
Checkpoint load_checkpoint(const std::string& path);

// report JSON excludes wall-clock; a sibling log written by write_train_log
// carries the timings so reruns stay byte-identical.
void write_train_report(const std::string& path, const TrainReport& report);
void write_train_log(const std::string& path, const TrainReport& report);

void write_metrics_report(const std::string& path, const MetricsReport& r);
std::string format_metrics_report(const MetricsReport& r);

}  // namespace troi
