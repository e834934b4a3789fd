#include "troi/io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace troi {

namespace {

using ojson = nlohmann::ordered_json;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path);
}

ojson read_json(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  try {
    return ojson::parse(f);
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
  }
}

ojson dims_to_json(const Dims3& d) { return ojson::array({d.nx, d.ny, d.nz}); }

Dims3 dims_from_json(const ojson& j) {
  if (!j.is_array() || j.size() != 3)
    throw std::runtime_error("mask/subject dims must be a 3-element array");
  Dims3 d{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
  d.validate();
  return d;
}

ojson weighted_to_json(const WeightedMask& m) {
  ojson j;
  j["dims"] = dims_to_json(m.dims);
  j["kind"] = "weighted";
  j["values"] = m.weights;
  return j;
}

ojson binary_to_json(const BinaryMask& m) {
  ojson j;
  j["dims"] = dims_to_json(m.dims);
  j["kind"] = "binary";
  std::vector<int> vals(m.bits.begin(), m.bits.end());
  j["values"] = vals;
  return j;
}

LoadedMask mask_from_json(const ojson& j, const std::string& where) {
  if (!j.is_object() || !j.contains("dims") || !j.contains("kind") || !j.contains("values"))
    throw std::runtime_error("malformed mask in " + where);
  Dims3 d = dims_from_json(j.at("dims"));
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "weighted") {
    WeightedMask m;
    m.dims = d;
    m.weights = j.at("values").get<std::vector<double>>();
    m.frozen.assign(m.weights.size(), 0);
    m.validate();
    return m;
  }
  if (kind == "binary") {
    BinaryMask m;
    m.dims = d;
    std::vector<int> vals = j.at("values").get<std::vector<int>>();
    m.bits.assign(vals.size(), 0);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (vals[i] != 0 && vals[i] != 1)
        throw std::runtime_error("malformed mask in " + where + ": binary value not 0/1");
      m.bits[i] = static_cast<std::uint8_t>(vals[i]);
    }
    m.validate();
    return m;
  }
  throw std::runtime_error("malformed mask in " + where + ": unknown kind '" + kind + "'");
}

ojson tensor_entry(const std::string& name, const Tensor2& t) {
  ojson j;
  j["name"] = name;
  j["rows"] = t.rows;
  j["cols"] = t.cols;
  j["values"] = t.v;
  return j;
}

}  // namespace

void save_mask(const std::string& path, const WeightedMask& m) {
  m.validate();
  write_text(path, weighted_to_json(m).dump());
}

void save_mask(const std::string& path, const BinaryMask& m) {
  m.validate();
  write_text(path, binary_to_json(m).dump());
}

LoadedMask load_mask(const std::string& path) { return mask_from_json(read_json(path), path); }

void export_pgm_slices(const Dims3& dims, const std::vector<double>& weights,
                       const std::string& dir, const std::string& prefix) {
  dims.validate();
  if (static_cast<int>(weights.size()) != dims.count())
    throw std::invalid_argument("export_pgm_slices: weights length does not match dims " +
                                dims.str());
  std::filesystem::create_directories(dir);
  double maxw = 0.0;
  for (double w : weights) maxw = std::max(maxw, w);
  for (int iz = 0; iz < dims.nz; ++iz) {
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_z%03d.pgm", iz);
    std::string path = dir + "/" + prefix + suffix;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "P5\n" << dims.ny << " " << dims.nx << "\n255\n";
    for (int ix = 0; ix < dims.nx; ++ix)
      for (int iy = 0; iy < dims.ny; ++iy) {
        double w = weights[flat_index(dims, ix, iy, iz)];
        int val = maxw > 0.0 ? static_cast<int>(std::lround(255.0 * w / maxw)) : 0;
        val = std::min(255, std::max(0, val));
        f.put(static_cast<char>(val));
      }
    if (!f) throw std::runtime_error("write failed for " + path);
  }
}

void export_pgm_slices(const WeightedMask& m, const std::string& dir, const std::string& prefix) {
  export_pgm_slices(m.dims, m.weights, dir, prefix);
}

void export_pgm_slices(const BinaryMask& m, const std::string& dir, const std::string& prefix) {
  std::vector<double> w(m.bits.begin(), m.bits.end());
  export_pgm_slices(m.dims, w, dir, prefix);
}

void save_subject(const std::string& path, const SyntheticSubject& s) {
  ojson spec;
  spec["dims"] = dims_to_json(s.spec.dims);
  spec["embed_dim"] = s.spec.embed_dim;
  ojson rois = ojson::array();
  for (const Ellipsoid& e : s.spec.roi) {
    ojson r;
    r["center"] = ojson::array({e.cx, e.cy, e.cz});
    r["radii"] = ojson::array({e.rx, e.ry, e.rz});
    rois.push_back(r);
  }
  spec["roi"] = rois;
  spec["snr"] = s.spec.snr;
  spec["n_samples"] = s.spec.n_samples;
  spec["train_fraction"] = s.spec.train_fraction;
  spec["seed"] = s.spec.seed;

  ojson samples = ojson::array();
  for (const Sample& smp : s.samples) {
    ojson e;
    e["fmri"] = smp.fmri.values;
    e["embedding"] = smp.embedding;
    samples.push_back(std::move(e));
  }

  ojson j;
  j["spec"] = std::move(spec);
  j["true_roi"] = binary_to_json(s.true_roi);
  j["samples"] = std::move(samples);
  j["split"] = ojson{{"train", s.train_idx}, {"test", s.test_idx}};
  write_text(path, j.dump());
}

SyntheticSubject load_subject(const std::string& path) {
  ojson j = read_json(path);
  SyntheticSubject s;
  try {
    const ojson& spec = j.at("spec");
    s.spec.dims = dims_from_json(spec.at("dims"));
    s.spec.embed_dim = spec.at("embed_dim").get<int>();
    for (const ojson& r : spec.at("roi")) {
      Ellipsoid e;
      e.cx = r.at("center")[0].get<double>();
      e.cy = r.at("center")[1].get<double>();
      e.cz = r.at("center")[2].get<double>();
      e.rx = r.at("radii")[0].get<double>();
      e.ry = r.at("radii")[1].get<double>();
      e.rz = r.at("radii")[2].get<double>();
      s.spec.roi.push_back(e);
    }
    s.spec.snr = spec.at("snr").get<double>();
    s.spec.n_samples = spec.at("n_samples").get<int>();
    s.spec.train_fraction = spec.at("train_fraction").get<double>();
    s.spec.seed = spec.at("seed").get<std::uint64_t>();

    LoadedMask roi = mask_from_json(j.at("true_roi"), path);
    if (!std::holds_alternative<BinaryMask>(roi))
      throw std::runtime_error("true_roi must be a binary mask");
    s.true_roi = std::get<BinaryMask>(roi);

    for (const ojson& e : j.at("samples")) {
      Sample smp;
      smp.fmri.dims = s.spec.dims;
      smp.fmri.values = e.at("fmri").get<std::vector<double>>();
      smp.embedding = e.at("embedding").get<std::vector<double>>();
      if (static_cast<int>(smp.embedding.size()) != s.spec.embed_dim)
        throw std::runtime_error("sample embedding size mismatch");
      smp.fmri.validate();
      s.samples.push_back(std::move(smp));
    }
    s.train_idx = j.at("split").at("train").get<std::vector<int>>();
    s.test_idx = j.at("split").at("test").get<std::vector<int>>();
  } catch (const ojson::exception& e) {
    throw std::runtime_error("malformed subject file " + path + ": " + e.what());
  }
  if (static_cast<int>(s.samples.size()) != s.spec.n_samples)
    throw std::runtime_error("malformed subject file " + path + ": sample count mismatch");
  for (int idx : s.train_idx)
    if (idx < 0 || idx >= s.spec.n_samples)
      throw std::runtime_error("malformed subject file " + path + ": train index out of range");
  for (int idx : s.test_idx)
    if (idx < 0 || idx >= s.spec.n_samples)
      throw std::runtime_error("malformed subject file " + path + ": test index out of range");
  if (s.true_roi.dims != s.spec.dims)
    throw std::runtime_error("malformed subject file " + path + ": roi dims mismatch");
  return s;
}

void save_checkpoint(const std::string& path, const ModelBundle& bundle, const OptimState& optim,
                     int epoch, std::uint64_t run_seed) {
  ModelBundle& b = const_cast<ModelBundle&>(bundle);
  auto params = b.params();
  if (optim.m.size() != params.size())
    throw std::invalid_argument("save_checkpoint: optimizer state does not match bundle");

  ojson j;
  j["dims"] = ojson{{"d_model", bundle.dims.d_model},
                    {"d_embed", bundle.dims.d_embed},
                    {"n_blocks", bundle.dims.n_blocks}};
  ojson subjects = ojson::array();
  for (const TroiInput& t : bundle.troi) {
    ojson e;
    e["grid_dims"] = dims_to_json(t.grid_dims);
    if (t.gathered()) {
      e["gather"] = t.gather;
      e["mask"] = binary_to_json(t.binary_mask);
    } else {
      e["gather"] = nullptr;
      WeightedMask m = t.mask_as_weighted();
      e["mask"] = weighted_to_json(m);
      std::vector<int> fr(t.mask_frozen.begin(), t.mask_frozen.end());
      e["frozen"] = fr;
    }
    subjects.push_back(std::move(e));
  }
  j["subjects"] = std::move(subjects);

  ojson jparams = ojson::array();
  for (const auto& p : params) jparams.push_back(tensor_entry(p.name, *p.t));
  j["params"] = std::move(jparams);
  j["mask"] = j["subjects"][0]["mask"];
  j["epoch"] = epoch;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(run_seed));
    j["rng_state"] = std::string(buf);
  }
  ojson moments = ojson::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ojson e;
    e["name"] = params[i].name;
    e["m"] = optim.m[i];
    e["v"] = optim.v[i];
    moments.push_back(std::move(e));
  }
  j["optim"] = ojson{{"step", optim.step}, {"moments", std::move(moments)}};
  write_text(path, j.dump());
}

Checkpoint load_checkpoint(const std::string& path) {
  ojson j = read_json(path);
  Checkpoint ck;
  try {
    const ojson& dims = j.at("dims");
    ck.bundle.dims.d_model = dims.at("d_model").get<int>();
    ck.bundle.dims.d_embed = dims.at("d_embed").get<int>();
    ck.bundle.dims.n_blocks = dims.at("n_blocks").get<int>();
    ck.bundle.dims.validate();

    for (const ojson& e : j.at("subjects")) {
      TroiInput t;
      t.grid_dims = dims_from_json(e.at("grid_dims"));
      if (e.at("gather").is_null()) {
        LoadedMask m = mask_from_json(e.at("mask"), path);
        if (!std::holds_alternative<WeightedMask>(m))
          throw std::runtime_error("dense input layer needs a weighted mask");
        WeightedMask wm = std::get<WeightedMask>(m);
        if (e.contains("frozen")) {
          std::vector<int> fr = e.at("frozen").get<std::vector<int>>();
          if (fr.size() != wm.weights.size())
            throw std::runtime_error("frozen flag length mismatch");
          for (std::size_t i = 0; i < fr.size(); ++i)
            wm.frozen[i] = static_cast<std::uint8_t>(fr[i] != 0);
        }
        if (wm.dims != t.grid_dims) throw std::runtime_error("mask dims mismatch");
        t.set_mask(wm);
      } else {
        t.gather = e.at("gather").get<std::vector<int>>();
        LoadedMask m = mask_from_json(e.at("mask"), path);
        if (!std::holds_alternative<BinaryMask>(m))
          throw std::runtime_error("gathered input layer needs a binary mask");
        t.binary_mask = std::get<BinaryMask>(m);
        if (t.binary_mask.dims != t.grid_dims) throw std::runtime_error("mask dims mismatch");
        if (t.binary_mask.nonzero_count() != static_cast<int>(t.gather.size()))
          throw std::runtime_error("gather list does not match mask");
      }
      ck.bundle.troi.push_back(std::move(t));
    }
    ck.bundle.blocks.resize(ck.bundle.dims.n_blocks);

    // Fill every tensor by name; the file must cover the enumeration exactly.
    auto params = ck.bundle.params();
    const ojson& jparams = j.at("params");
    if (jparams.size() != params.size())
      throw std::runtime_error("checkpoint parameter count mismatch: file has " +
                               std::to_string(jparams.size()) + ", model needs " +
                               std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const ojson& e = jparams[i];
      if (e.at("name").get<std::string>() != params[i].name)
        throw std::runtime_error("checkpoint parameter order mismatch at " + params[i].name);
      Tensor2 t(e.at("rows").get<int>(), e.at("cols").get<int>());
      t.v = e.at("values").get<std::vector<double>>();
      if (t.v.size() != static_cast<std::size_t>(t.rows) * t.cols)
        throw std::runtime_error("checkpoint tensor size mismatch at " + params[i].name);
      *params[i].t = std::move(t);
    }

    ck.epoch = j.at("epoch").get<int>();
    ck.run_seed = std::stoull(j.at("rng_state").get<std::string>(), nullptr, 16);

    const ojson& optim = j.at("optim");
    ck.optim.step = optim.at("step").get<long>();
    const ojson& moments = optim.at("moments");
    if (moments.size() != params.size())
      throw std::runtime_error("checkpoint optimizer moment count mismatch");
    ck.optim.m.resize(params.size());
    ck.optim.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const ojson& e = moments[i];
      if (e.at("name").get<std::string>() != params[i].name)
        throw std::runtime_error("checkpoint optimizer order mismatch at " + params[i].name);
      ck.optim.m[i] = e.at("m").get<std::vector<double>>();
      ck.optim.v[i] = e.at("v").get<std::vector<double>>();
      if (ck.optim.m[i].size() != params[i].t->size() ||
          ck.optim.v[i].size() != params[i].t->size())
        throw std::runtime_error("checkpoint optimizer moment size mismatch at " +
                                 params[i].name);
    }
  } catch (const ojson::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path + ": " + e.what());
  }

  // Shape coherence against the declared dims.
  for (std::size_t i = 0; i < ck.bundle.troi.size(); ++i) {
    const TroiInput& t = ck.bundle.troi[i];
    if (t.linear.w.rows != t.input_width() || t.linear.w.cols != ck.bundle.dims.d_model)
      throw std::runtime_error("checkpoint " + path + ": input layer " + std::to_string(i) +
                               " shape " + t.linear.w.shape_str() + " does not match dims");
  }
  return ck;
}

void write_train_report(const std::string& path, const TrainReport& report) {
  ojson j;
  j["phase"] = report.phase;
  ojson epochs = ojson::array();
  for (const EpochRecord& e : report.epochs) {
    ojson r;
    r["epoch"] = e.epoch;
    r["clip"] = e.clip;
    r["prior"] = e.prior;
    r["l1"] = e.l1;
    r["total"] = e.total;
    r["lr"] = e.lr;
    r["mask_nnz"] = e.mask_nnz;
    r["mixed"] = e.mixed;
    epochs.push_back(std::move(r));
  }
  j["epochs"] = std::move(epochs);
  if (report.stage1_iterations > 0) {
    j["stage1"] = ojson{{"iterations", report.stage1_iterations},
                        {"nnz", report.nnz_trace},
                        {"filtered_nnz", report.filtered_nnz_trace},
                        {"psi", report.psi_trace}};
  }
  write_text(path, j.dump(2) + "\n");
}

void write_train_log(const std::string& path, const TrainReport& report) {
  std::string text;
  double total = 0.0;
  for (const EpochRecord& e : report.epochs) {
    text += "epoch " + std::to_string(e.epoch) + " wall_sec " + std::to_string(e.wall_sec) + "\n";
    total += e.wall_sec;
  }
  text += "total wall_sec " + std::to_string(total) + "\n";
  write_text(path, text);
}

std::string format_metrics_report(const MetricsReport& r) {
  auto num = [](double x) { return ojson(x).dump(); };
  std::string out;
  out += "image_retrieval_acc " + num(r.image_retrieval_acc) + "\n";
  out += "brain_retrieval_acc " + num(r.brain_retrieval_acc) + "\n";
  out += "two_way_ident " + num(r.two_way_ident) + "\n";
  out += "prior_embed_mse " + num(r.prior_embed_mse) + "\n";
  out += "mask_iou " + num(r.mask_iou) + "\n";
  out += "mask_precision " + num(r.mask_precision) + "\n";
  out += "mask_recall " + num(r.mask_recall) + "\n";
  out += "n_candidates " + std::to_string(r.n_candidates) + "\n";
  out += "voxel_count " + std::to_string(r.voxel_count) + "\n";
  return out;
}

void write_metrics_report(const std::string& path, const MetricsReport& r) {
  write_text(path, format_metrics_report(r));
}

}  // namespace troi
