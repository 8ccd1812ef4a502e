#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "d2l/nncore/tensor.hpp"

namespace d2l {

enum class OptimizerKind { sgd, adam };

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Plain gradient descent or Adam with bias correction. Moment buffers are
/// created lazily on the first step and must keep matching parameter shapes.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, AdamSettings adam = {});

  /// Applies one update using each parameter's accumulated gradient.
  void step(std::span<Parameter* const> params);

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  std::size_t step_count() const { return steps_; }

 private:
  OptimizerKind kind_;
  double lr_;
  AdamSettings adam_;
  std::size_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace d2l
