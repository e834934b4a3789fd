#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "troi/optim.hpp"
#include "troi/rng.hpp"

using namespace troi;

namespace {

// A bundle is the unit the optimizer operates on; the smallest one gives a
// handful of tensors to track.
ModelBundle tiny_bundle(std::uint64_t seed) {
  ModelDims dims;
  dims.d_model = 3;
  dims.d_embed = 2;
  dims.n_blocks = 1;
  return init_params(seed, dims, {Dims3{1, 2, 1}});
}

}  // namespace

TEST_SUITE_BEGIN("optim");

TEST_CASE("one Adam step matches the textbook update") {
  ModelBundle b = tiny_bundle(1);
  auto params = b.params();
  OptimState opt;
  opt.init_for(params);
  std::vector<std::uint8_t> trainable(params.size(), 1);

  std::vector<std::vector<double>> w0, g0;
  for (auto& p : params) {
    p.t->ensure_grad();
    for (double& g : p.t->g) g = 0.01 + 0.1 * (&g - p.t->g.data());
    w0.push_back(p.t->v);
    g0.push_back(p.t->g);
  }
  double lr = 0.05;
  opt.apply(params, trainable, lr);

  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].t->v.size(); ++j) {
      double g = g0[i][j];
      double m_hat = ((1 - b1) * g) / (1 - b1);         // first step
      double v_hat = ((1 - b2) * g * g) / (1 - b2);
      double want = w0[i][j] - lr * m_hat / (std::sqrt(v_hat) + eps);
      CHECK(params[i].t->v[j] == doctest::Approx(want).epsilon(1e-14));
    }
  CHECK(opt.step == 1);
}

TEST_CASE("many Adam steps track an independent reference loop") {
  ModelBundle b = tiny_bundle(2);
  auto params = b.params();
  OptimState opt;
  opt.init_for(params);
  std::vector<std::uint8_t> trainable(params.size(), 1);

  // Reference state, updated side by side from the same gradient draws.
  std::vector<std::vector<double>> rw, rm, rv;
  for (auto& p : params) {
    rw.push_back(p.t->v);
    rm.push_back(std::vector<double>(p.t->size(), 0.0));
    rv.push_back(std::vector<double>(p.t->size(), 0.0));
    p.t->ensure_grad();
  }
  Rng rng(3, "optim.ref");
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int step = 1; step <= 25; ++step) {
    double lr = 0.01 * (1.0 + 0.1 * step);
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < params[i].t->size(); ++j) {
        double g = rng.normal();
        params[i].t->g[j] = g;
        rm[i][j] = b1 * rm[i][j] + (1 - b1) * g;
        rv[i][j] = b2 * rv[i][j] + (1 - b2) * g * g;
        double mh = rm[i][j] / (1 - std::pow(b1, step));
        double vh = rv[i][j] / (1 - std::pow(b2, step));
        rw[i][j] -= lr * mh / (std::sqrt(vh) + eps);
      }
    opt.apply(params, trainable, lr);
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].t->size(); ++j)
      CHECK(params[i].t->v[j] == doctest::Approx(rw[i][j]).epsilon(1e-12));
}

TEST_CASE("non-trainable tensors keep values and moments") {
  ModelBundle b = tiny_bundle(3);
  auto params = b.params();
  OptimState opt;
  opt.init_for(params);
  std::vector<std::uint8_t> trainable(params.size(), 1);
  trainable[1] = 0;  // freeze one tensor

  for (auto& p : params) {
    p.t->ensure_grad();
    for (double& g : p.t->g) g = 0.5;
  }
  std::vector<double> w_before = params[1].t->v;
  opt.apply(params, trainable, 0.1);
  CHECK(params[1].t->v == w_before);
  for (double m : opt.m[1]) CHECK(m == 0.0);
  for (double v : opt.v[1]) CHECK(v == 0.0);
  // Trainable neighbors did move.
  bool moved = false;
  for (std::size_t j = 0; j < params[0].t->size(); ++j)
    moved = moved || params[0].t->v[j] != 1.0;
  CHECK(moved);
}

TEST_CASE("apply validates sizes and gradient presence") {
  ModelBundle b = tiny_bundle(4);
  auto params = b.params();
  OptimState opt;
  opt.init_for(params);
  std::vector<std::uint8_t> trainable(params.size(), 1);
  // No ensure_grad anywhere: gradients are missing.
  CHECK_THROWS_AS(opt.apply(params, trainable, 0.1), std::invalid_argument);

  for (auto& p : params) p.t->ensure_grad();
  std::vector<std::uint8_t> short_bitmap(params.size() - 1, 1);
  CHECK_THROWS_AS(opt.apply(params, short_bitmap, 0.1), std::invalid_argument);

  OptimState empty;
  CHECK_THROWS_AS(empty.apply(params, trainable, 0.1), std::invalid_argument);
}

TEST_CASE("cosine schedule hits its pinned values") {
  CosineSchedule s;
  s.total_epochs = 100;
  s.warmup_epochs = 5;
  s.base_lr = 1e-3;
  s.min_lr = 1e-5;

  // Warmup ramps linearly and reaches base exactly when it ends.
  CHECK(lr_at(s, 0) == doctest::Approx(1e-3 * 1.0 / 5.0).epsilon(1e-15));
  CHECK(lr_at(s, 4) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(lr_at(s, 5) == doctest::Approx(1e-3).epsilon(1e-15));  // cos(0) = 1
  // Final epoch is exactly min_lr.
  CHECK(lr_at(s, 99) == 1e-5);
  // Midpoint of the cosine span: (5 + 99) / 2 = 52.
  CHECK(lr_at(s, 52) == doctest::Approx((1e-3 + 1e-5) / 2.0).epsilon(1e-12));
  // Monotone nonincreasing after warmup.
  for (int e = 6; e < 100; ++e) CHECK(lr_at(s, e) <= lr_at(s, e - 1));

  CHECK_THROWS_AS(lr_at(s, -1), std::invalid_argument);
  CHECK_THROWS_AS(lr_at(s, 100), std::invalid_argument);
}

TEST_CASE("zero warmup starts at base_lr") {
  CosineSchedule s;
  s.total_epochs = 10;
  s.warmup_epochs = 0;
  CHECK(lr_at(s, 0) == doctest::Approx(s.base_lr).epsilon(1e-15));
  CHECK(lr_at(s, 9) == s.min_lr);
}

TEST_CASE("degenerate base == min gives a constant schedule") {
  CosineSchedule s;
  s.total_epochs = 7;
  s.warmup_epochs = 0;
  s.base_lr = 5e-3;
  s.min_lr = 5e-3;
  for (int e = 0; e < 7; ++e) CHECK(lr_at(s, e) == 5e-3);
}

TEST_CASE("schedule validation") {
  CosineSchedule s;
  CHECK_NOTHROW(s.validate());
  s.warmup_epochs = s.total_epochs;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = CosineSchedule{};
  s.min_lr = s.base_lr * 2;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = CosineSchedule{};
  s.total_epochs = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_SUITE_END();
