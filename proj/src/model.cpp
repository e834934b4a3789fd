#include "troi/model.hpp"

#include <cmath>
#include <stdexcept>

#include "troi/rng.hpp"

namespace troi {

void ModelDims::validate() const {
  if (d_model < 1 || d_embed < 1 || n_blocks < 0)
    throw std::invalid_argument("ModelDims: d_model and d_embed must be >= 1, n_blocks >= 0");
}

WeightedMask TroiInput::mask_as_weighted() const {
  if (gathered())
    throw std::logic_error("TroiInput: gathered layer has no weighted mask");
  WeightedMask m{grid_dims, mask.v, mask_frozen};
  return m;
}

void TroiInput::set_mask(const WeightedMask& m) {
  if (m.dims != grid_dims)
    throw std::invalid_argument("TroiInput::set_mask: dimension mismatch " + m.dims.str() +
                                " vs " + grid_dims.str());
  mask.rows = 1;
  mask.cols = grid_dims.count();
  mask.v = m.weights;
  mask.g.clear();
  mask_frozen = m.frozen;
}

std::vector<ModelBundle::ParamRef> ModelBundle::params() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < troi.size(); ++i) {
    std::string base = "troi" + std::to_string(i);
    if (!troi[i].gathered()) out.push_back({base + ".mask", &troi[i].mask, true});
    out.push_back({base + ".linear.w", &troi[i].linear.w, false});
    out.push_back({base + ".linear.b", &troi[i].linear.b, false});
  }
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    std::string base = "backbone.block" + std::to_string(k);
    out.push_back({base + ".lin1.w", &blocks[k].lin1.w, false});
    out.push_back({base + ".lin1.b", &blocks[k].lin1.b, false});
    out.push_back({base + ".lin2.w", &blocks[k].lin2.w, false});
    out.push_back({base + ".lin2.b", &blocks[k].lin2.b, false});
  }
  out.push_back({"backbone.out.w", &backbone_out.w, false});
  out.push_back({"backbone.out.b", &backbone_out.b, false});
  out.push_back({"projector.hidden.w", &proj_hidden.w, false});
  out.push_back({"projector.hidden.b", &proj_hidden.b, false});
  out.push_back({"projector.out.w", &proj_out.w, false});
  out.push_back({"projector.out.b", &proj_out.b, false});
  out.push_back({"prior.hidden.w", &prior_hidden.w, false});
  out.push_back({"prior.hidden.b", &prior_hidden.b, false});
  out.push_back({"prior.out.w", &prior_out.w, false});
  out.push_back({"prior.out.b", &prior_out.b, false});
  return out;
}

namespace {

LinearLayer init_linear(int fan_in, int fan_out, Rng& rng, bool fan_in_scaled, bool zero) {
  LinearLayer l;
  l.w = Tensor2(fan_in, fan_out);
  l.b = Tensor2(1, fan_out);
  if (!zero) {
    double s = fan_in_scaled ? std::sqrt(1.0 / fan_in) : 0.05;
    for (double& v : l.w.v) v = rng.uniform(-s, s);
  }
  return l;
}

}  // namespace

ModelBundle init_params(std::uint64_t seed, const ModelDims& dims,
                        const std::vector<Dims3>& subject_grids, bool fan_in_scaled) {
  dims.validate();
  if (subject_grids.empty())
    throw std::invalid_argument("init_params: at least one subject grid required");
  ModelBundle m;
  m.dims = dims;
  Rng rng(seed, "init");
  for (std::size_t i = 0; i < subject_grids.size(); ++i) {
    subject_grids[i].validate();
    TroiInput t;
    t.grid_dims = subject_grids[i];
    int n_vox = t.grid_dims.count();
    t.mask = Tensor2(1, n_vox, 1.0);
    t.mask_frozen.assign(n_vox, 0);
    t.linear = init_linear(n_vox, dims.d_model, rng, fan_in_scaled, false);
    m.troi.push_back(std::move(t));
  }
  for (int k = 0; k < dims.n_blocks; ++k) {
    ResidualBlock b;
    b.lin1 = init_linear(dims.d_model, dims.d_model, rng, fan_in_scaled, false);
    b.lin2 = init_linear(dims.d_model, dims.d_model, rng, fan_in_scaled, true);
    m.blocks.push_back(std::move(b));
  }
  m.backbone_out = init_linear(dims.d_model, dims.d_embed, rng, fan_in_scaled, false);
  m.proj_hidden = init_linear(dims.d_embed, dims.d_embed, rng, fan_in_scaled, false);
  m.proj_out = init_linear(dims.d_embed, dims.d_embed, rng, fan_in_scaled, false);
  m.prior_hidden = init_linear(dims.d_embed, 2 * dims.d_embed, rng, fan_in_scaled, false);
  m.prior_out = init_linear(2 * dims.d_embed, dims.d_embed, rng, fan_in_scaled, false);
  return m;
}

namespace {

Graph::NodeRef linear_forward(Graph& g, LinearLayer& l, Graph::NodeRef x,
                              const std::string& name) {
  Graph::NodeRef w = g.leaf(l.w, name + ".w");
  Graph::NodeRef b = g.leaf(l.b, name + ".b");
  return g.add_bias(g.matmul(x, w, name + ".matmul"), b, name + ".bias");
}

}  // namespace

ForwardNodes model_forward(Graph& g, ModelBundle& m, int subj, const Tensor2& x, bool mask_grad) {
  if (subj < 0 || subj >= static_cast<int>(m.troi.size()))
    throw std::invalid_argument("model_forward: subject index " + std::to_string(subj) +
                                " out of range");
  TroiInput& t = m.troi[subj];
  if (x.cols != t.input_width())
    throw std::invalid_argument("model_forward: batch width " + std::to_string(x.cols) +
                                " does not match input width " + std::to_string(t.input_width()));
  if (x.rows < 1) throw std::invalid_argument("model_forward: empty batch");

  std::string base = "troi" + std::to_string(subj);
  Graph::NodeRef cur = g.constant(x, base + ".input");
  ForwardNodes out;
  out.mask_leaf.id = -1;
  if (!t.gathered()) {
    if (mask_grad) {
      out.mask_leaf = g.leaf_frozen(t.mask, t.mask_frozen, base + ".mask");
      cur = g.mul_rowvec(cur, out.mask_leaf, base + ".masked");
    } else {
      bool all_ones = true;
      for (double w : t.mask.v)
        if (w != 1.0) {
          all_ones = false;
          break;
        }
      // x .* 1 is exactly x, so the all-ones pretraining mask is skipped.
      if (!all_ones)
        cur = g.mul_rowvec(cur, g.constant(t.mask, base + ".mask"), base + ".masked");
    }
  } else if (mask_grad) {
    throw std::logic_error("model_forward: mask gradients requested on a gathered layer");
  }

  cur = linear_forward(g, t.linear, cur, base + ".linear");
  for (std::size_t k = 0; k < m.blocks.size(); ++k) {
    std::string bname = "backbone.block" + std::to_string(k);
    Graph::NodeRef h1 = g.tanh_map(linear_forward(g, m.blocks[k].lin1, cur, bname + ".lin1"),
                                   bname + ".tanh");
    Graph::NodeRef h2 = linear_forward(g, m.blocks[k].lin2, h1, bname + ".lin2");
    cur = g.add(cur, h2, bname + ".skip");
  }
  out.b = linear_forward(g, m.backbone_out, cur, "backbone.out");

  Graph::NodeRef ph = g.tanh_map(linear_forward(g, m.proj_hidden, out.b, "projector.hidden"),
                                 "projector.tanh");
  out.h = linear_forward(g, m.proj_out, ph, "projector.out");

  Graph::NodeRef rh = g.tanh_map(linear_forward(g, m.prior_hidden, out.b, "prior.hidden"),
                                 "prior.tanh");
  out.p = linear_forward(g, m.prior_out, rh, "prior.out");
  return out;
}

}  // namespace troi
