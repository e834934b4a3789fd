#include "troi/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace troi {

void OptimState::init_for(const std::vector<ModelBundle::ParamRef>& params) {
  step = 0;
  m.assign(params.size(), {});
  v.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].t->size(), 0.0);
    v[i].assign(params[i].t->size(), 0.0);
  }
}

void OptimState::apply(const std::vector<ModelBundle::ParamRef>& params,
                       const std::vector<std::uint8_t>& trainable, double lr) {
  if (m.size() != params.size() || trainable.size() != params.size())
    throw std::invalid_argument("OptimState::apply: state not sized for this parameter list");
  ++step;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable[i]) continue;
    Tensor2& t = *params[i].t;
    if (t.g.size() != t.v.size())
      throw std::invalid_argument("OptimState::apply: missing gradient for " + params[i].name);
    if (m[i].size() != t.size())
      throw std::invalid_argument("OptimState::apply: moment size mismatch for " +
                                  params[i].name);
    for (std::size_t j = 0; j < t.size(); ++j) {
      double grad = t.g[j];
      m[i][j] = cfg.beta1 * m[i][j] + (1.0 - cfg.beta1) * grad;
      v[i][j] = cfg.beta2 * v[i][j] + (1.0 - cfg.beta2) * grad * grad;
      double mhat = m[i][j] / bc1;
      double vhat = v[i][j] / bc2;
      t.v[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

void CosineSchedule::validate() const {
  if (total_epochs < 1) throw std::invalid_argument("CosineSchedule: total_epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= total_epochs)
    throw std::invalid_argument("CosineSchedule: warmup_epochs must be in [0, total_epochs)");
  if (!(base_lr > 0.0) || !(min_lr >= 0.0) || min_lr > base_lr)
    throw std::invalid_argument("CosineSchedule: need 0 <= min_lr <= base_lr, base_lr > 0");
}

double lr_at(const CosineSchedule& s, int epoch) {
  s.validate();
  if (epoch < 0 || epoch >= s.total_epochs)
    throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) +
                                " outside schedule of " + std::to_string(s.total_epochs));
  if (epoch < s.warmup_epochs)
    return s.base_lr * static_cast<double>(epoch + 1) / s.warmup_epochs;
  if (s.total_epochs == s.warmup_epochs + 1) return s.min_lr;
  double t = static_cast<double>(epoch - s.warmup_epochs) /
             static_cast<double>(s.total_epochs - 1 - s.warmup_epochs);
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace troi
