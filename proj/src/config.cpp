#include "troi/config.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "troi/rng.hpp"

namespace troi {

namespace {

using ojson = nlohmann::ordered_json;

ojson subject_to_json(const SyntheticSubjectSpec& s) {
  ojson j;
  j["dims"] = ojson::array({s.dims.nx, s.dims.ny, s.dims.nz});
  ojson rois = ojson::array();
  for (const Ellipsoid& e : s.roi) {
    rois.push_back(ojson{{"center", ojson::array({e.cx, e.cy, e.cz})},
                         {"radii", ojson::array({e.rx, e.ry, e.rz})}});
  }
  j["roi"] = rois;
  j["embed_dim"] = s.embed_dim;
  j["snr"] = s.snr;
  j["n_samples"] = s.n_samples;
  j["train_fraction"] = s.train_fraction;
  return j;
}

SyntheticSubjectSpec subject_from_json(const ojson& j) {
  SyntheticSubjectSpec s;
  const ojson& d = j.at("dims");
  s.dims = Dims3{d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
  for (const ojson& r : j.at("roi")) {
    Ellipsoid e;
    e.cx = r.at("center")[0].get<double>();
    e.cy = r.at("center")[1].get<double>();
    e.cz = r.at("center")[2].get<double>();
    e.rx = r.at("radii")[0].get<double>();
    e.ry = r.at("radii")[1].get<double>();
    e.rz = r.at("radii")[2].get<double>();
    s.roi.push_back(e);
  }
  s.embed_dim = j.at("embed_dim").get<int>();
  s.snr = j.at("snr").get<double>();
  s.n_samples = j.at("n_samples").get<int>();
  s.train_fraction = j.at("train_fraction").get<double>();
  return s;
}

ojson config_to_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["model"] = ojson{{"d_model", c.model.d_model},
                     {"d_embed", c.model.d_embed},
                     {"n_blocks", c.model.n_blocks}};
  ojson subs = ojson::array();
  for (const SyntheticSubjectSpec& s : c.subjects) subs.push_back(subject_to_json(s));
  j["subjects"] = std::move(subs);
  j["target_subject"] = c.target_subject;
  j["pretrain_subjects"] = c.pretrain_subjects;
  j["batch_size"] = c.batch_size;
  j["schedule"] = ojson{{"total_epochs", c.schedule.total_epochs},
                        {"warmup_epochs", c.schedule.warmup_epochs},
                        {"base_lr", c.schedule.base_lr},
                        {"min_lr", c.schedule.min_lr}};
  j["loss"] = ojson{{"tau", c.loss.tau},
                    {"epsilon", c.loss.epsilon},
                    {"mix_stop_fraction", c.loss.mix_stop_fraction}};
  j["mix_alpha"] = c.mix_alpha;
  j["mix_beta"] = c.mix_beta;
  j["trainable"] = ojson{{"backbone", c.trainable.backbone},
                         {"projector", c.trainable.projector},
                         {"prior", c.trainable.prior}};
  j["stage1"] = ojson{{"budget_v", c.stage1.budget_v},
                      {"th", c.stage1.th},
                      {"psi0", c.stage1.psi0},
                      {"psi_growth", c.stage1.psi_growth},
                      {"epochs_per_iter", c.stage1.epochs_per_iter},
                      {"max_iters", c.stage1.max_iters},
                      {"stall_patience", c.stage1.stall_patience},
                      {"lr", c.stage1.lr},
                      {"filter_sigma", c.stage1.filter.sigma},
                      {"filter_radius", c.stage1.filter.radius},
                      {"filter_enabled", c.stage1.filter_enabled}};
  j["stage2_mode"] = c.stage2_mode;
  j["eval"] = ojson{{"n_candidates", c.eval_n_candidates},
                    {"two_way_passes", c.eval_two_way_passes}};
  return j;
}

RunConfig config_from_json(const ojson& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.out_dir = j.at("out_dir").get<std::string>();
  const ojson& m = j.at("model");
  c.model.d_model = m.at("d_model").get<int>();
  c.model.d_embed = m.at("d_embed").get<int>();
  c.model.n_blocks = m.at("n_blocks").get<int>();
  c.subjects.clear();
  for (const ojson& s : j.at("subjects")) c.subjects.push_back(subject_from_json(s));
  c.target_subject = j.at("target_subject").get<int>();
  c.pretrain_subjects = j.at("pretrain_subjects").get<std::vector<int>>();
  c.batch_size = j.at("batch_size").get<int>();
  const ojson& sch = j.at("schedule");
  c.schedule.total_epochs = sch.at("total_epochs").get<int>();
  c.schedule.warmup_epochs = sch.at("warmup_epochs").get<int>();
  c.schedule.base_lr = sch.at("base_lr").get<double>();
  c.schedule.min_lr = sch.at("min_lr").get<double>();
  const ojson& lo = j.at("loss");
  c.loss.tau = lo.at("tau").get<double>();
  c.loss.epsilon = lo.at("epsilon").get<double>();
  c.loss.mix_stop_fraction = lo.at("mix_stop_fraction").get<double>();
  c.mix_alpha = j.at("mix_alpha").get<double>();
  c.mix_beta = j.at("mix_beta").get<double>();
  const ojson& tr = j.at("trainable");
  c.trainable.backbone = tr.at("backbone").get<bool>();
  c.trainable.projector = tr.at("projector").get<bool>();
  c.trainable.prior = tr.at("prior").get<bool>();
  const ojson& s1 = j.at("stage1");
  c.stage1.budget_v = s1.at("budget_v").get<int>();
  c.stage1.th = s1.at("th").get<double>();
  c.stage1.psi0 = s1.at("psi0").get<double>();
  c.stage1.psi_growth = s1.at("psi_growth").get<double>();
  c.stage1.epochs_per_iter = s1.at("epochs_per_iter").get<int>();
  c.stage1.max_iters = s1.at("max_iters").get<int>();
  c.stage1.stall_patience = s1.at("stall_patience").get<int>();
  c.stage1.lr = s1.at("lr").get<double>();
  c.stage1.filter.sigma = s1.at("filter_sigma").get<double>();
  c.stage1.filter.radius = s1.at("filter_radius").get<int>();
  c.stage1.filter_enabled = s1.at("filter_enabled").get<bool>();
  c.stage2_mode = j.at("stage2_mode").get<std::string>();
  const ojson& ev = j.at("eval");
  c.eval_n_candidates = ev.at("n_candidates").get<int>();
  c.eval_two_way_passes = ev.at("two_way_passes").get<int>();
  return c;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (subjects.empty()) throw std::invalid_argument("config: no subjects");
  for (const SyntheticSubjectSpec& s : subjects) {
    s.dims.validate();
    if (s.embed_dim != model.d_embed)
      throw std::invalid_argument("config: subject embed_dim " + std::to_string(s.embed_dim) +
                                  " does not match model d_embed " +
                                  std::to_string(model.d_embed));
  }
  if (target_subject < 0 || target_subject >= static_cast<int>(subjects.size()))
    throw std::invalid_argument("config: target_subject out of range");
  for (int i : pretrain_subjects)
    if (i < 0 || i >= static_cast<int>(subjects.size()))
      throw std::invalid_argument("config: pretrain subject index out of range");
  if (pretrain_subjects.empty())
    throw std::invalid_argument("config: pretrain_subjects is empty");
  if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
  schedule.validate();
  loss.validate();
  if (mix_alpha <= 0.0 || mix_beta <= 0.0)
    throw std::invalid_argument("config: mix alpha/beta must be positive");
  stage1.validate();
  if (stage2_mode != "rewind" && stage2_mode != "finetune")
    throw std::invalid_argument("config: stage2_mode must be 'rewind' or 'finetune'");
  if (eval_two_way_passes < 1)
    throw std::invalid_argument("config: eval_two_way_passes must be >= 1");
}

RunConfig default_config() {
  RunConfig c;
  c.seed = 1;
  // Sphere of radius 4.9 at integer centers: 485 lattice voxels.
  const double r = 4.9;
  const double centers[5][3] = {
      {10, 10, 10}, {7, 8, 11}, {12, 11, 7}, {8, 12, 12}, {11, 7, 12}};
  for (int i = 0; i < 5; ++i) {
    SyntheticSubjectSpec s;
    s.dims = Dims3{20, 20, 20};
    s.embed_dim = 16;
    s.roi = {Ellipsoid{centers[i][0], centers[i][1], centers[i][2], r, r, r}};
    s.snr = 2.0;
    s.n_samples = 400;
    s.train_fraction = 0.75;
    c.subjects.push_back(s);
  }
  c.target_subject = 0;
  c.pretrain_subjects = {1, 2, 3, 4};
  return c;
}

SyntheticSubjectSpec subject_spec_for(const RunConfig& cfg, int index) {
  if (index < 0 || index >= static_cast<int>(cfg.subjects.size()))
    throw std::invalid_argument("subject index " + std::to_string(index) + " out of range");
  SyntheticSubjectSpec s = cfg.subjects[index];
  s.seed = derive_seed(cfg.seed, "subject", static_cast<std::uint64_t>(index));
  return s;
}

TrainConfig train_config_for(const RunConfig& cfg) {
  TrainConfig t;
  t.batch_size = cfg.batch_size;
  t.schedule = cfg.schedule;
  t.loss = cfg.loss;
  t.mix_alpha = cfg.mix_alpha;
  t.mix_beta = cfg.mix_beta;
  t.seed = cfg.seed;
  t.trainable = cfg.trainable;
  return t;
}

std::string run_config_to_json_text(const RunConfig& cfg) {
  return config_to_json(cfg).dump(2) + "\n";
}

RunConfig run_config_from_json_text(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("malformed config JSON: ") + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const ojson::exception& e) {
    throw std::runtime_error(std::string("malformed config: ") + e.what());
  }
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << run_config_to_json_text(cfg);
  if (!f) throw std::runtime_error("write failed for " + path);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return run_config_from_json_text(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace troi
