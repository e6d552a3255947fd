#include "svmixer/optim.hpp"

#include <cmath>

#include "svmixer/errors.hpp"

namespace svmixer {

AdamWState make_adamw_state(const ParameterStore& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ParameterStore& params, const ParameterStore& grads, AdamWState& state, double lr,
                double weight_decay, const AdamWOptions& opt) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw Error("adamw_step: parameter, gradient and state layouts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.entries()[i].second;
    const Tensor& g = grads.entries()[i].second;
    Tensor& m = state.m.entries()[i].second;
    Tensor& v = state.v.entries()[i].second;
    if (g.shape() != p.shape()) {
      throw DimensionError("adamw_step: gradient shape mismatch for " + params.entries()[i].first);
    }
    for (std::size_t e = 0; e < p.numel(); ++e) {
      p[e] -= lr * weight_decay * p[e];
      m[e] = opt.beta1 * m[e] + (1.0 - opt.beta1) * g[e];
      v[e] = opt.beta2 * v[e] + (1.0 - opt.beta2) * g[e] * g[e];
      const double mhat = m[e] / bc1;
      const double vhat = v[e] / bc2;
      p[e] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

PlateauScheduler::PlateauScheduler(double lr0, std::size_t patience, double factor)
    : lr_(lr0), patience_(patience), factor_(factor) {}

bool PlateauScheduler::step(double metric) {
  if (metric < best_) {
    best_ = metric;
    bad_ = 0;
    return false;
  }
  if (++bad_ < patience_) return false;
  lr_ *= factor_;
  bad_ = 0;
  return true;
}

bool EarlyStopping::step(double metric) {
  ++epoch_;
  if (metric < best_) {
    best_ = metric;
    best_epoch_ = epoch_;
    bad_ = 0;
    return false;
  }
  return ++bad_ >= patience_;
}

}  // namespace svmixer
