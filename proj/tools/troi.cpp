// Command-line driver for the TROI pipeline. Each subcommand runs one phase
// and reads earlier phases' outputs from the run directory:
//
//   troi gen        out/gen/subject_<i>.json
//   troi pretrain   out/pretrain/{checkpoint.json,report.json,report.log}
//   troi stage1     out/stage1/{mask.json,checkpoint.json,report.json,report.log}
//   troi stage2     out/stage2/{checkpoint.json,report.json,report.log}
//   troi eval       out/eval/metrics_<phase>_subj<k>_seed<s>.txt
//   troi export-mask  PGM slice images of a saved mask
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "troi/config.hpp"
#include "troi/eval.hpp"
#include "troi/io.hpp"
#include "troi/trainer.hpp"

namespace fs = std::filesystem;
using namespace troi;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
};

RunConfig resolve_config(const GlobalOpts& g) {
  RunConfig cfg = g.config_path.empty() ? default_config() : load_run_config(g.config_path);
  if (g.seed_set) cfg.seed = g.seed;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  cfg.validate();
  return cfg;
}

std::string subject_path(const RunConfig& cfg, int i) {
  return cfg.out_dir + "/gen/subject_" + std::to_string(i) + ".json";
}

SyntheticSubject load_zscored_subject(const RunConfig& cfg, int i) {
  return zscore(load_subject(subject_path(cfg, i)));
}

BinaryMask as_binary(const LoadedMask& m) {
  if (std::holds_alternative<BinaryMask>(m)) return std::get<BinaryMask>(m);
  return binarize(std::get<WeightedMask>(m), 0.0);
}

// The mask a checkpoint's first input layer encodes, for overlap metrics.
BinaryMask checkpoint_mask(const ModelBundle& bundle) {
  if (bundle.troi.empty()) throw std::runtime_error("checkpoint has no input layer");
  const TroiInput& t = bundle.troi.front();
  if (t.gathered()) return t.binary_mask;
  return binarize(t.mask_as_weighted(), 0.0);
}

int run_gen(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir + "/gen");
  save_run_config(cfg.out_dir + "/gen/config.json", cfg);
  for (int i = 0; i < static_cast<int>(cfg.subjects.size()); ++i) {
    SyntheticSubject s = generate_subject(subject_spec_for(cfg, i));
    save_subject(subject_path(cfg, i), s);
    std::cout << "subject " << i << ": grid " << s.spec.dims.str() << ", roi voxels "
              << s.true_roi.nonzero_count() << ", samples " << s.spec.n_samples << " ("
              << s.train_idx.size() << " train / " << s.test_idx.size() << " test)\n";
  }
  return 0;
}

// --epochs 0: save an untrained trunk so the no-pretraining ablation can run
// the rest of the pipeline against the same checkpoint plumbing.
int run_pretrain_skip(const RunConfig& cfg) {
  std::vector<Dims3> grids;
  for (int i : cfg.pretrain_subjects) grids.push_back(cfg.subjects[i].dims);
  ModelBundle bundle = init_params(cfg.seed, cfg.model, grids);
  OptimState optim;
  optim.init_for(bundle.params());

  fs::create_directories(cfg.out_dir + "/pretrain");
  save_checkpoint(cfg.out_dir + "/pretrain/checkpoint.json", bundle, optim, 0, cfg.seed);
  TrainReport report;
  report.phase = "pretrain";
  write_train_report(cfg.out_dir + "/pretrain/report.json", report);
  write_train_log(cfg.out_dir + "/pretrain/report.log", report);
  std::cout << "pretraining skipped; saved the untrained trunk\n";
  return 0;
}

int run_pretrain(const RunConfig& cfg) {
  std::vector<SyntheticSubject> owned;
  owned.reserve(cfg.pretrain_subjects.size());
  for (int i : cfg.pretrain_subjects) owned.push_back(load_zscored_subject(cfg, i));
  std::vector<const SyntheticSubject*> subjects;
  for (const SyntheticSubject& s : owned) subjects.push_back(&s);

  PretrainResult res = pretrain(subjects, cfg.model, train_config_for(cfg));

  fs::create_directories(cfg.out_dir + "/pretrain");
  save_checkpoint(cfg.out_dir + "/pretrain/checkpoint.json", res.bundle, res.optim,
                  cfg.schedule.total_epochs, cfg.seed);
  write_train_report(cfg.out_dir + "/pretrain/report.json", res.report);
  write_train_log(cfg.out_dir + "/pretrain/report.log", res.report);
  const EpochRecord& last = res.report.epochs.back();
  std::cout << "pretrained on " << subjects.size() << " subject(s), "
            << cfg.schedule.total_epochs << " epochs; final loss " << last.total << " (clip "
            << last.clip << ", prior " << last.prior << ")\n";
  return 0;
}

int run_stage1(const RunConfig& cfg) {
  SyntheticSubject subject = load_zscored_subject(cfg, cfg.target_subject);
  Checkpoint ck = load_checkpoint(cfg.out_dir + "/pretrain/checkpoint.json");

  Stage1Result res = stage1_sparse_mask(ck.bundle, subject, cfg.stage1, train_config_for(cfg));

  fs::create_directories(cfg.out_dir + "/stage1");
  save_mask(cfg.out_dir + "/stage1/mask.json", res.mask);
  OptimState dummy;
  {
    ModelBundle& b = res.bundle;
    dummy.init_for(b.params());
  }
  save_checkpoint(cfg.out_dir + "/stage1/checkpoint.json", res.bundle, dummy,
                  static_cast<int>(res.report.epochs.size()), cfg.seed);
  write_train_report(cfg.out_dir + "/stage1/report.json", res.report);
  write_train_log(cfg.out_dir + "/stage1/report.log", res.report);

  OverlapStats ov = mask_overlap(res.mask, subject.true_roi);
  std::cout << "stage 1 selected " << res.mask.nonzero_count() << " voxels (budget "
            << cfg.stage1.budget_v << ") in " << res.report.stage1_iterations
            << " iteration(s); iou vs true roi " << ov.iou << "\n";
  return 0;
}

int run_stage2(const RunConfig& cfg, const std::string& mask_path,
               const std::string& checkpoint_path) {
  SyntheticSubject subject = load_zscored_subject(cfg, cfg.target_subject);
  Stage2Mode mode =
      cfg.stage2_mode == "finetune" ? Stage2Mode::finetune : Stage2Mode::rewind;

  std::string mpath = mask_path.empty() ? cfg.out_dir + "/stage1/mask.json" : mask_path;
  BinaryMask mask = as_binary(load_mask(mpath));

  std::string cpath = checkpoint_path;
  if (cpath.empty())
    cpath = cfg.out_dir + (mode == Stage2Mode::finetune ? "/stage1/checkpoint.json"
                                                        : "/pretrain/checkpoint.json");
  Checkpoint ck = load_checkpoint(cpath);

  Stage2Result res = stage2_retrain(ck.bundle, mask, subject, train_config_for(cfg), mode);

  fs::create_directories(cfg.out_dir + "/stage2");
  save_checkpoint(cfg.out_dir + "/stage2/checkpoint.json", res.bundle, res.optim,
                  cfg.schedule.total_epochs, cfg.seed);
  write_train_report(cfg.out_dir + "/stage2/report.json", res.report);
  write_train_log(cfg.out_dir + "/stage2/report.log", res.report);
  const EpochRecord& last = res.report.epochs.back();
  std::cout << "stage 2 (" << cfg.stage2_mode << ") retrained on " << mask.nonzero_count()
            << " voxels, " << cfg.schedule.total_epochs << " epochs; final loss " << last.total
            << "\n";
  return 0;
}

int run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& mask_path, const std::string& phase, int subject_override) {
  int si = subject_override >= 0 ? subject_override : cfg.target_subject;
  SyntheticSubject subject = load_zscored_subject(cfg, si);

  std::string cpath =
      checkpoint_path.empty() ? cfg.out_dir + "/stage2/checkpoint.json" : checkpoint_path;
  Checkpoint ck = load_checkpoint(cpath);

  BinaryMask mask =
      mask_path.empty() ? checkpoint_mask(ck.bundle) : as_binary(load_mask(mask_path));

  EvalConfig ecfg;
  ecfg.n_candidates = cfg.eval_n_candidates;
  ecfg.two_way_passes = cfg.eval_two_way_passes;
  ecfg.rng_seed = cfg.seed;
  MetricsReport r = evaluate(ck.bundle, subject, mask, ecfg);

  fs::create_directories(cfg.out_dir + "/eval");
  std::string path = cfg.out_dir + "/eval/metrics_" + phase + "_subj" + std::to_string(si) +
                     "_seed" + std::to_string(cfg.seed) + ".txt";
  write_metrics_report(path, r);
  std::cout << format_metrics_report(r);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int run_export_mask(const std::string& mask_path, const std::string& pgm_dir,
                    const std::string& prefix, const std::string& subject_file) {
  LoadedMask m = load_mask(mask_path);
  if (std::holds_alternative<WeightedMask>(m))
    export_pgm_slices(std::get<WeightedMask>(m), pgm_dir, prefix);
  else
    export_pgm_slices(std::get<BinaryMask>(m), pgm_dir, prefix);
  BinaryMask support = as_binary(m);
  std::cout << "exported slices to " << pgm_dir << "/ (" << support.nonzero_count()
            << " nonzero voxels)\n";
  if (!subject_file.empty()) {
    SyntheticSubject s = load_subject(subject_file);
    OverlapStats ov = mask_overlap(support, s.true_roi);
    std::cout << "vs true roi: iou " << ov.iou << ", precision " << ov.precision << ", recall "
              << ov.recall << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TROI: two-stage voxel mask selection on synthetic subjects"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "run configuration JSON (default: built-in)");
  app.add_option("--seed", g.seed, "override the run seed")->each([&g](const std::string&) {
    g.seed_set = true;
  });
  app.add_option("--out", g.out_dir, "override the output directory");

  auto* gen = app.add_subcommand("gen", "generate the synthetic subjects");
  int n_samples = 0;
  double snr = 0.0;
  std::vector<int> gen_dims;
  gen->add_option("--n-samples", n_samples, "override samples per subject");
  gen->add_option("--snr", snr, "override the signal-to-noise ratio");
  gen->add_option("--dims", gen_dims, "override every subject's grid, e.g. --dims 60,40,40")
      ->delimiter(',')
      ->expected(3);

  auto* pre = app.add_subcommand("pretrain", "train the shared trunk on the pretrain subjects");
  int epochs = -1;
  pre->add_option("--epochs", epochs,
                  "override the schedule length (0 saves an untrained trunk)");

  auto* s1 = app.add_subcommand("stage1", "select a sparse voxel mask for the target subject");
  int budget = 0;
  bool no_filter = false;
  s1->add_option("--budget", budget, "override the voxel budget V");
  s1->add_flag("--no-filter", no_filter, "skip the low-pass step before binarization");

  auto* s2 = app.add_subcommand("stage2", "retrain on the selected voxels");
  std::string mask_path, checkpoint_path, mode;
  s2->add_option("--mask", mask_path, "mask file (default: <out>/stage1/mask.json)");
  s2->add_option("--checkpoint", checkpoint_path,
                 "warm-start checkpoint (default depends on mode)");
  s2->add_option("--mode", mode, "rewind or finetune (default: config)")
      ->check(CLI::IsMember({"rewind", "finetune"}));

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a subject's test split");
  std::string ev_checkpoint, ev_mask, ev_phase = "stage2";
  int ev_subject = -1, ev_candidates = -1;
  ev->add_option("--checkpoint", ev_checkpoint,
                 "checkpoint to evaluate (default: <out>/stage2/checkpoint.json)");
  ev->add_option("--mask", ev_mask, "mask for overlap metrics (default: from checkpoint)");
  ev->add_option("--phase", ev_phase, "label used in the metrics file name");
  ev->add_option("--subject", ev_subject, "subject index (default: config target)");
  ev->add_option("--n-candidates", ev_candidates, "cap the candidate set (0 = full test split)");

  auto* ex = app.add_subcommand("export-mask", "write a mask as per-slice PGM images");
  std::string ex_mask, ex_dir, ex_prefix = "mask", ex_subject;
  ex->add_option("--mask", ex_mask, "mask file (default: <out>/stage1/mask.json)");
  ex->add_option("--pgm-dir", ex_dir, "output directory (default: <out>/masks)");
  ex->add_option("--prefix", ex_prefix, "file name prefix");
  ex->add_option("--subject", ex_subject, "subject file; prints mask overlap vs its true ROI");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = resolve_config(g);
    if (gen->parsed()) {
      if (n_samples > 0)
        for (SyntheticSubjectSpec& s : cfg.subjects) s.n_samples = n_samples;
      if (snr > 0.0)
        for (SyntheticSubjectSpec& s : cfg.subjects) s.snr = snr;
      if (!gen_dims.empty())
        for (SyntheticSubjectSpec& s : cfg.subjects) s.dims = Dims3{gen_dims[0], gen_dims[1], gen_dims[2]};
      return run_gen(cfg);
    }
    if (pre->parsed()) {
      if (epochs == 0) return run_pretrain_skip(cfg);
      if (epochs > 0) cfg.schedule.total_epochs = epochs;
      return run_pretrain(cfg);
    }
    if (s1->parsed()) {
      if (budget > 0) cfg.stage1.budget_v = budget;
      if (no_filter) cfg.stage1.filter_enabled = false;
      return run_stage1(cfg);
    }
    if (s2->parsed()) {
      if (!mode.empty()) cfg.stage2_mode = mode;
      return run_stage2(cfg, mask_path, checkpoint_path);
    }
    if (ev->parsed()) {
      if (ev_candidates >= 0) cfg.eval_n_candidates = ev_candidates;
      return run_eval(cfg, ev_checkpoint, ev_mask, ev_phase, ev_subject);
    }
    if (ex->parsed()) {
      std::string mpath = ex_mask.empty() ? cfg.out_dir + "/stage1/mask.json" : ex_mask;
      std::string dir = ex_dir.empty() ? cfg.out_dir + "/masks" : ex_dir;
      return run_export_mask(mpath, dir, ex_prefix, ex_subject);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid argument: " << e.what() << "\n";
    return 1;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: unhandled: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
