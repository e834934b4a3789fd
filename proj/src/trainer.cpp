#include "troi/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "troi/graph.hpp"

namespace troi {

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
  schedule.validate();
  loss.validate();
  if (!(mix_alpha > 0.0) || !(mix_beta > 0.0))
    throw std::invalid_argument("TrainConfig: mix_alpha and mix_beta must be positive");
}

void Stage1Config::validate() const {
  if (budget_v < 1) throw std::invalid_argument("Stage1Config: budget_v must be >= 1");
  if (!(th >= 0.0)) throw std::invalid_argument("Stage1Config: th must be nonnegative");
  if (!(psi0 >= 0.0)) throw std::invalid_argument("Stage1Config: psi0 must be nonnegative");
  if (!(psi_growth >= 1.0))
    throw std::invalid_argument("Stage1Config: psi_growth must be >= 1");
  if (epochs_per_iter < 1)
    throw std::invalid_argument("Stage1Config: epochs_per_iter must be >= 1");
  if (max_iters < 1) throw std::invalid_argument("Stage1Config: max_iters must be >= 1");
  if (stall_patience < 1)
    throw std::invalid_argument("Stage1Config: stall_patience must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("Stage1Config: lr must be positive");
  filter.validate();
}

namespace {

// Flattens mixed batch inputs to B x width, gathering columns when the input
// layer is in gathered mode.
Tensor2 batch_tensor(const MixupBatch& mb, const TroiInput& t) {
  int B = mb.size();
  Tensor2 x(B, t.input_width());
  if (t.gathered()) {
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < t.input_width(); ++j)
        x.at(i, j) = mb.inputs[i].values[t.gather[j]];
  } else {
    for (int i = 0; i < B; ++i)
      std::copy(mb.inputs[i].values.begin(), mb.inputs[i].values.end(),
                x.v.begin() + static_cast<std::size_t>(i) * x.cols);
  }
  return x;
}

Tensor2 target_matrix(const SyntheticSubject& s, const std::vector<int>& idx, int b0, int b1) {
  int d = s.spec.embed_dim;
  Tensor2 c(b1 - b0, d);
  for (int i = b0; i < b1; ++i)
    std::copy(s.samples[idx[i]].embedding.begin(), s.samples[idx[i]].embedding.end(),
              c.v.begin() + static_cast<std::size_t>(i - b0) * d);
  return c;
}

std::vector<std::uint8_t> trainable_bitmap(const std::vector<ModelBundle::ParamRef>& params,
                                           const TrainFlags& flags, Stage stage) {
  std::vector<std::uint8_t> out(params.size(), 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& n = params[i].name;
    bool on;
    if (params[i].is_mask)
      on = stage == Stage::stage1;
    else if (n.rfind("troi", 0) == 0)
      on = true;
    else if (n.rfind("backbone.", 0) == 0)
      on = flags.backbone;
    else if (n.rfind("projector.", 0) == 0)
      on = flags.projector;
    else
      on = flags.prior;
    out[i] = on ? 1 : 0;
  }
  return out;
}

// Projection step keeping the mask invariant valid under Adam updates:
// weights stay nonnegative and frozen entries stay exactly zero.
void clamp_masks(ModelBundle& bundle) {
  for (TroiInput& t : bundle.troi) {
    if (t.gathered()) continue;
    for (std::size_t i = 0; i < t.mask.size(); ++i) {
      if (t.mask_frozen[i])
        t.mask.v[i] = 0.0;
      else if (t.mask.v[i] < 0.0)
        t.mask.v[i] = 0.0;
    }
  }
}

int active_mask_nnz(const ModelBundle& bundle) {
  const TroiInput& t = bundle.troi.front();
  if (t.gathered()) return static_cast<int>(t.gather.size());
  int n = 0;
  for (double w : t.mask.v) n += (w != 0.0);
  return n;
}

void copy_trunk(const ModelBundle& from, ModelBundle& to) {
  to.blocks = from.blocks;
  to.backbone_out = from.backbone_out;
  to.proj_hidden = from.proj_hidden;
  to.proj_out = from.proj_out;
  to.prior_hidden = from.prior_hidden;
  to.prior_out = from.prior_out;
}

}  // namespace

void train_epochs(ModelBundle& bundle, OptimState& optim,
                  const std::vector<const SyntheticSubject*>& subjects, const TrainConfig& cfg,
                  Stage stage, int from_epoch, int to_epoch, const std::string& phase_tag,
                  TrainReport& report) {
  cfg.validate();
  if (subjects.size() != bundle.troi.size())
    throw std::invalid_argument("train_epochs: " + std::to_string(subjects.size()) +
                                " subjects for " + std::to_string(bundle.troi.size()) +
                                " input layers");
  if (subjects.empty()) throw std::invalid_argument("train_epochs: no subjects");
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const SyntheticSubject& s = *subjects[i];
    if (s.spec.embed_dim != bundle.dims.d_embed)
      throw std::invalid_argument("train_epochs: subject embed_dim " +
                                  std::to_string(s.spec.embed_dim) + " does not match d_embed " +
                                  std::to_string(bundle.dims.d_embed));
    if (s.spec.dims != bundle.troi[i].grid_dims)
      throw std::invalid_argument("train_epochs: subject grid " + s.spec.dims.str() +
                                  " does not match input layer grid " +
                                  bundle.troi[i].grid_dims.str());
    if (s.train_idx.size() < 2)
      throw std::invalid_argument("train_epochs: train split of subject " + std::to_string(i) +
                                  " has fewer than 2 samples");
  }
  if (from_epoch < 0 || to_epoch > cfg.schedule.total_epochs || from_epoch > to_epoch)
    throw std::invalid_argument("train_epochs: epoch range outside schedule");

  auto params = bundle.params();
  if (optim.m.size() != params.size())
    throw std::invalid_argument("train_epochs: optimizer state does not match bundle");
  auto trainable = trainable_bitmap(params, cfg.trainable, stage);
  int mix_until = static_cast<int>(
      std::ceil(cfg.loss.mix_stop_fraction * cfg.schedule.total_epochs));

  for (int e = from_epoch; e < to_epoch; ++e) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = lr_at(cfg.schedule, e);
    bool mixed = stage != Stage::stage1 && e < mix_until;
    double sum_clip = 0, sum_prior = 0, sum_l1 = 0, sum_total = 0;
    int n_batches = 0;

    for (std::size_t si = 0; si < subjects.size(); ++si) {
      const SyntheticSubject& subj = *subjects[si];
      TroiInput& t = bundle.troi[si];
      std::string ekey = phase_tag + ".e" + std::to_string(e) + ".s" + std::to_string(si);
      std::vector<int> order = subj.train_idx;
      Rng shuffle_rng(cfg.seed, ekey + ".shuffle");
      shuffle_rng.shuffle(order);
      Rng mix_rng(cfg.seed, ekey + ".mix");

      int n = static_cast<int>(order.size());
      for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
        int b1 = std::min(n, b0 + cfg.batch_size);
        if (b1 - b0 < 2) break;  // contrastive loss needs pairs

        std::vector<VoxelGrid> xs;
        xs.reserve(b1 - b0);
        for (int i = b0; i < b1; ++i) xs.push_back(subj.samples[order[i]].fmri);
        MixupBatch mb = mixed ? mixco_mix(xs, cfg.mix_alpha, cfg.mix_beta, mix_rng)
                              : plain_batch(xs);
        Tensor2 c = target_matrix(subj, order, b0, b1);
        Tensor2 x = batch_tensor(mb, t);

        for (auto& p : params) {
          p.t->ensure_grad();
          p.t->zero_grad();
        }
        Graph g;
        bool want_mask = stage == Stage::stage1 && !t.gathered();
        ForwardNodes f = model_forward(g, bundle, static_cast<int>(si), x, want_mask);
        Graph::NodeRef clip = mixco_contrastive(g, f.h, c, mb, cfg.loss.tau);
        Graph::NodeRef prior = prior_mse(g, f.p, c, mb);
        Graph::NodeRef l1{-1};
        if (stage == Stage::stage1) l1 = l1_mask_penalty(g, f.mask_leaf);
        Graph::NodeRef total = total_loss(g, clip, prior, l1, cfg.loss, stage);
        g.backward(total);
        optim.apply(params, trainable, lr);
        if (stage == Stage::stage1) clamp_masks(bundle);

        sum_clip += g.scalar(clip);
        sum_prior += g.scalar(prior);
        if (stage == Stage::stage1) sum_l1 += g.scalar(l1);
        sum_total += g.scalar(total);
        ++n_batches;
      }
    }
    if (n_batches == 0)
      throw std::runtime_error("train_epochs: no usable batches (splits too small)");

    EpochRecord rec;
    rec.epoch = e;
    rec.clip = sum_clip / n_batches;
    rec.prior = sum_prior / n_batches;
    rec.l1 = sum_l1 / n_batches;
    rec.total = sum_total / n_batches;
    rec.lr = lr;
    rec.mask_nnz = active_mask_nnz(bundle);
    rec.mixed = mixed;
    rec.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);
  }
}

PretrainResult pretrain(const std::vector<const SyntheticSubject*>& subjects,
                        const ModelDims& dims, const TrainConfig& cfg) {
  if (subjects.empty()) throw std::invalid_argument("pretrain: no subjects");
  std::vector<Dims3> grids;
  grids.reserve(subjects.size());
  for (const SyntheticSubject* s : subjects) grids.push_back(s->spec.dims);

  PretrainResult out;
  out.bundle = init_params(cfg.seed, dims, grids);
  out.optim.init_for(out.bundle.params());
  out.report.phase = "pretrain";
  train_epochs(out.bundle, out.optim, subjects, cfg, Stage::pretrain, 0,
               cfg.schedule.total_epochs, "pretrain", out.report);
  return out;
}

Stage1Result stage1_sparse_mask(const ModelBundle& pretrained, const SyntheticSubject& subject,
                                const Stage1Config& s1, const TrainConfig& cfg) {
  s1.validate();
  cfg.validate();
  pretrained.dims.validate();

  Stage1Result out;
  out.report.phase = "stage1";
  // Fresh input layer for the new subject; trunk warm-started.
  out.bundle = init_params(cfg.seed, pretrained.dims, {subject.spec.dims});
  copy_trunk(pretrained, out.bundle);

  int n_vox = subject.spec.dims.count();
  if (s1.budget_v >= n_vox) {
    std::cerr << "warning: stage1 budget " << s1.budget_v << " covers the whole grid ("
              << n_vox << " voxels); returning all-ones mask\n";
    out.mask = binarize(WeightedMask::ones(subject.spec.dims), 0.5);
    return out;
  }

  OptimState optim;
  optim.init_for(out.bundle.params());

  // Constant-lr schedule sized to the iteration cap so lr_at stays in range.
  TrainConfig iter_cfg = cfg;
  iter_cfg.schedule.total_epochs = s1.max_iters * s1.epochs_per_iter;
  iter_cfg.schedule.warmup_epochs = 0;
  iter_cfg.schedule.base_lr = s1.lr;
  iter_cfg.schedule.min_lr = s1.lr;
  iter_cfg.loss.psi = s1.psi0;

  std::vector<const SyntheticSubject*> subj_list{&subject};
  TroiInput& t = out.bundle.troi.front();
  double psi = s1.psi0;
  int best_filtered = n_vox + 1;
  int stall = 0;

  for (int iter = 0; iter < s1.max_iters; ++iter) {
    iter_cfg.loss.psi = psi;
    train_epochs(out.bundle, optim, subj_list, iter_cfg, Stage::stage1,
                 iter * s1.epochs_per_iter, (iter + 1) * s1.epochs_per_iter, "stage1",
                 out.report);

    WeightedMask m = t.mask_as_weighted();
    hard_threshold_in_place(m, s1.th);
    t.set_mask(m);
    out.report.nnz_trace.push_back(m.nonzero_count());

    WeightedMask snapshot = s1.filter_enabled ? gaussian_filter(m, s1.filter) : m;
    BinaryMask mb = binarize(snapshot, s1.th);
    int filtered = mb.nonzero_count();
    out.report.filtered_nnz_trace.push_back(filtered);
    out.report.psi_trace.push_back(psi);
    out.report.stage1_iterations = iter + 1;

    if (filtered <= s1.budget_v) {
      out.mask = std::move(mb);
      return out;
    }
    if (filtered < best_filtered) {
      best_filtered = filtered;
      stall = 0;
    } else if (++stall >= s1.stall_patience) {
      psi *= s1.psi_growth;
      stall = 0;
    }
  }
  throw std::runtime_error("stage1: budget " + std::to_string(s1.budget_v) +
                           " not reached within " + std::to_string(s1.max_iters) +
                           " iterations (best " + std::to_string(best_filtered) + " voxels)");
}

Stage2Result stage2_retrain(const ModelBundle& warm, const BinaryMask& mask,
                            const SyntheticSubject& subject, const TrainConfig& cfg,
                            Stage2Mode mode) {
  cfg.validate();
  mask.validate();
  if (mask.dims != subject.spec.dims)
    throw std::invalid_argument("stage2: mask dims " + mask.dims.str() +
                                " do not match subject grid " + subject.spec.dims.str());
  if (mask.nonzero_count() == 0) throw std::invalid_argument("stage2: mask selects no voxels");
  if (warm.troi.empty()) throw std::invalid_argument("stage2: warm bundle has no input layer");

  std::vector<int> gather;
  for (int i = 0; i < static_cast<int>(mask.bits.size()); ++i)
    if (mask.bits[i]) gather.push_back(i);

  Stage2Result out;
  out.bundle.dims = warm.dims;
  copy_trunk(warm, out.bundle);

  TroiInput t;
  t.grid_dims = subject.spec.dims;
  t.binary_mask = mask;
  t.gather = gather;
  int width = static_cast<int>(gather.size());
  if (mode == Stage2Mode::rewind) {
    // Learning-rate rewinding: fresh input layer, full schedule from epoch 0.
    Rng rng(cfg.seed, "stage2.init");
    double s = std::sqrt(1.0 / width);
    t.linear.w = Tensor2(width, warm.dims.d_model);
    for (double& v : t.linear.w.v) v = rng.uniform(-s, s);
    t.linear.b = Tensor2(1, warm.dims.d_model);
  } else {
    // Continuation baseline: gather the stage-1 rows with the learned mask
    // weight folded in, so the function on surviving voxels is unchanged.
    const TroiInput& src = warm.troi.front();
    if (src.gathered())
      throw std::invalid_argument("stage2 finetune: warm bundle input layer is already gathered");
    if (src.grid_dims != subject.spec.dims)
      throw std::invalid_argument("stage2 finetune: warm bundle grid " + src.grid_dims.str() +
                                  " does not match subject grid " + subject.spec.dims.str());
    t.linear.w = Tensor2(width, warm.dims.d_model);
    for (int r = 0; r < width; ++r) {
      double mw = src.mask.v[gather[r]];
      for (int j = 0; j < warm.dims.d_model; ++j)
        t.linear.w.at(r, j) = mw * src.linear.w.at(gather[r], j);
    }
    t.linear.b = src.linear.b;
  }
  out.bundle.troi.push_back(std::move(t));

  TrainConfig run_cfg = cfg;
  if (mode == Stage2Mode::finetune) {
    run_cfg.schedule.warmup_epochs = 0;
    run_cfg.schedule.base_lr = cfg.schedule.min_lr;
    run_cfg.schedule.min_lr = cfg.schedule.min_lr;
  }

  out.optim.init_for(out.bundle.params());
  out.report.phase = mode == Stage2Mode::rewind ? "stage2" : "stage2_finetune";
  std::vector<const SyntheticSubject*> subj_list{&subject};
  train_epochs(out.bundle, out.optim, subj_list, run_cfg, Stage::stage2, 0,
               run_cfg.schedule.total_epochs, out.report.phase, out.report);
  return out;
}

}  // namespace troi
