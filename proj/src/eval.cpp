#include "troi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "troi/graph.hpp"
#include "troi/rng.hpp"

namespace troi {

namespace {

std::vector<double> row_norms(const Tensor2& t, const char* what) {
  std::vector<double> out(t.rows);
  for (int i = 0; i < t.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < t.cols; ++j) s += t.at(i, j) * t.at(i, j);
    out[i] = std::sqrt(s);
    if (out[i] == 0.0)
      throw std::invalid_argument(std::string(what) + ": zero-norm row " + std::to_string(i));
  }
  return out;
}

double cosine(const Tensor2& a, int i, const Tensor2& b, int j, double na, double nb) {
  double s = 0.0;
  for (int d = 0; d < a.cols; ++d) s += a.at(i, d) * b.at(j, d);
  return s / (na * nb);
}

}  // namespace

double retrieval_accuracy(const Tensor2& queries, const Tensor2& candidates) {
  if (queries.rows != candidates.rows || queries.cols != candidates.cols)
    throw std::invalid_argument("retrieval_accuracy: shape mismatch " + queries.shape_str() +
                                " vs " + candidates.shape_str());
  if (queries.rows < 2)
    throw std::invalid_argument("retrieval_accuracy: needs >= 2 candidates");
  std::vector<double> qn = row_norms(queries, "retrieval_accuracy queries");
  std::vector<double> cn = row_norms(candidates, "retrieval_accuracy candidates");
  int correct = 0;
  for (int i = 0; i < queries.rows; ++i) {
    int best = 0;
    double best_sim = cosine(queries, i, candidates, 0, qn[i], cn[0]);
    for (int j = 1; j < candidates.rows; ++j) {
      double sim = cosine(queries, i, candidates, j, qn[i], cn[j]);
      if (sim > best_sim) {  // strict: ties keep the lowest index
        best_sim = sim;
        best = j;
      }
    }
    correct += (best == i);
  }
  return static_cast<double>(correct) / queries.rows;
}

double two_way_identification_with(const Tensor2& p, const Tensor2& c,
                                   const std::vector<int>& distractors) {
  if (p.rows != c.rows || p.cols != c.cols)
    throw std::invalid_argument("two_way_identification: shape mismatch " + p.shape_str() +
                                " vs " + c.shape_str());
  if (p.rows < 2) throw std::invalid_argument("two_way_identification: needs >= 2 samples");
  if (static_cast<int>(distractors.size()) != p.rows)
    throw std::invalid_argument("two_way_identification: distractor table size mismatch");
  std::vector<double> pn = row_norms(p, "two_way_identification predictions");
  std::vector<double> cn = row_norms(c, "two_way_identification targets");
  int correct = 0;
  for (int j = 0; j < p.rows; ++j) {
    int d = distractors[j];
    if (d < 0 || d >= p.rows || d == j)
      throw std::invalid_argument("two_way_identification: invalid distractor for row " +
                                  std::to_string(j));
    double own = cosine(p, j, c, j, pn[j], cn[j]);
    double other = cosine(p, j, c, d, pn[j], cn[d]);
    correct += (own > other);  // ties count as incorrect
  }
  return static_cast<double>(correct) / p.rows;
}

double two_way_identification(const Tensor2& p, const Tensor2& c, int n_passes,
                              std::uint64_t rng_seed) {
  if (n_passes < 1) throw std::invalid_argument("two_way_identification: n_passes must be >= 1");
  if (p.rows < 2) throw std::invalid_argument("two_way_identification: needs >= 2 samples");
  Rng rng(rng_seed, "two_way");
  double acc = 0.0;
  for (int pass = 0; pass < n_passes; ++pass) {
    std::vector<int> d(p.rows);
    for (int j = 0; j < p.rows; ++j) {
      int pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.rows) - 1));
      d[j] = pick + (pick >= j ? 1 : 0);
    }
    acc += two_way_identification_with(p, c, d);
  }
  return acc / n_passes;
}

MetricsReport evaluate(ModelBundle& bundle, const SyntheticSubject& subject,
                       const BinaryMask& mask, const EvalConfig& cfg) {
  if (bundle.troi.empty()) throw std::invalid_argument("evaluate: bundle has no input layer");
  if (subject.spec.embed_dim != bundle.dims.d_embed)
    throw std::invalid_argument("evaluate: subject embed_dim " +
                                std::to_string(subject.spec.embed_dim) +
                                " does not match d_embed " + std::to_string(bundle.dims.d_embed));
  if (subject.test_idx.empty()) throw std::invalid_argument("evaluate: empty test split");

  int n = static_cast<int>(subject.test_idx.size());
  if (cfg.n_candidates > 0) n = std::min(n, cfg.n_candidates);
  if (n < 2) throw std::invalid_argument("evaluate: needs >= 2 test candidates");

  TroiInput& t = bundle.troi.front();
  int width = t.input_width();
  int d = bundle.dims.d_embed;
  Tensor2 h(n, d), p(n, d), c(n, d);

  // Chunked plain forwards; no gradients involved.
  const int chunk = 64;
  for (int b0 = 0; b0 < n; b0 += chunk) {
    int b1 = std::min(n, b0 + chunk);
    Tensor2 x(b1 - b0, width);
    for (int i = b0; i < b1; ++i) {
      const VoxelGrid& f = subject.samples[subject.test_idx[i]].fmri;
      if (f.dims != t.grid_dims)
        throw std::invalid_argument("evaluate: sample grid " + f.dims.str() +
                                    " does not match input layer grid " + t.grid_dims.str());
      if (t.gathered())
        for (int j = 0; j < width; ++j) x.at(i - b0, j) = f.values[t.gather[j]];
      else
        std::copy(f.values.begin(), f.values.end(),
                  x.v.begin() + static_cast<std::size_t>(i - b0) * width);
    }
    Graph g;
    ForwardNodes out = model_forward(g, bundle, 0, x, false);
    const Tensor2& hb = g.value(out.h);
    const Tensor2& pb = g.value(out.p);
    for (int i = b0; i < b1; ++i)
      for (int j = 0; j < d; ++j) {
        h.at(i, j) = hb.at(i - b0, j);
        p.at(i, j) = pb.at(i - b0, j);
      }
  }
  for (int i = 0; i < n; ++i) {
    const std::vector<double>& e = subject.samples[subject.test_idx[i]].embedding;
    for (int j = 0; j < d; ++j) c.at(i, j) = e[j];
  }

  MetricsReport r;
  r.image_retrieval_acc = retrieval_accuracy(h, c);
  r.brain_retrieval_acc = retrieval_accuracy(c, h);
  r.two_way_ident = two_way_identification(p, c, cfg.two_way_passes, cfg.rng_seed);
  double mse = 0.0;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      double diff = p.at(i, j) - c.at(i, j);
      s += diff * diff;
    }
    mse += s;
  }
  r.prior_embed_mse = mse / n;
  OverlapStats ov = mask_overlap(mask, subject.true_roi);
  r.mask_iou = ov.iou;
  r.mask_precision = ov.precision;
  r.mask_recall = ov.recall;
  r.n_candidates = n;
  r.voxel_count = mask.nonzero_count();
  return r;
}

}  // namespace troi
