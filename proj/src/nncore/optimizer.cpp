#include "d2l/nncore/optimizer.hpp"

#include <cmath>

namespace d2l {

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, AdamSettings adam)
    : kind_(kind), lr_(learning_rate), adam_(adam) {}

void Optimizer::step(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    if (p->grad.shape() != p->value.shape()) throw ShapeError("Optimizer::step: gradient shape mismatch");
    p->grad.require_finite("gradient passed to optimizer");
  }
  ++steps_;
  if (kind_ == OptimizerKind::sgd) {
    for (Parameter* p : params) {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr_ * p->grad[i];
    }
    return;
  }

  if (m_.empty()) {
    for (Parameter* p : params) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeError("Optimizer::step: parameter list changed");
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(adam_.beta1, t);
  const double c2 = 1.0 - std::pow(adam_.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (m_[k].shape() != p.value.shape()) throw ShapeError("Optimizer::step: moment buffer shape mismatch");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m_[k][i] = adam_.beta1 * m_[k][i] + (1.0 - adam_.beta1) * g;
      v_[k][i] = adam_.beta2 * v_[k][i] + (1.0 - adam_.beta2) * g * g;
      const double mhat = m_[k][i] / c1;
      const double vhat = v_[k][i] / c2;
      p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + adam_.eps);
    }
  }
}

}  // namespace d2l
