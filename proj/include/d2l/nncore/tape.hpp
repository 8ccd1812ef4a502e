#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "d2l/nncore/tensor.hpp"

namespace d2l {

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
/// tape is a topological order by construction and cannot contain cycles.
/// A tape is single-use: build, call backward once (or several times to
/// accumulate), then discard.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that owns its value and does not require a gradient.
  Var constant(Tensor value);
  /// Leaf referencing an external tensor that must outlive the tape.
  Var constant_ref(const Tensor& value);
  /// Leaf whose gradient accumulates into `p.grad` on backward.
  Var parameter(Parameter& p);
  /// Leaf that owns its value and keeps a gradient readable via grad().
  Var input(Tensor value);

  const Tensor& value(Var v) const;
  /// Gradient of a node after backward(); zero-filled if untouched.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be a 1x1 node.
  void backward(Var loss);

  // Used by op implementations.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  Var push(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);
  Tensor& grad_mut(std::size_t id);
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& value_of(std::size_t id) const;

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Differentiable operations. All operate on 2-D tensors.

Var matmul(Tape& t, Var a, Var b);
/// a[n,m] + bias[1,m] broadcast over rows.
Var add_bias(Tape& t, Var a, Var bias);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var relu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
/// Column-wise concatenation of same-row-count inputs.
Var concat_cols(Tape& t, std::span<const Var> parts);
/// Repeats a [1,m] row n times.
Var broadcast_rows(Tape& t, Var row, std::size_t n);
Var sum_all(Tape& t, Var a);
Var mean_all(Tape& t, Var a);
/// Mean squared error over all elements.
Var mse(Tape& t, Var a, Var b);

/// Mean over rows of -log softmax(logits restricted to `mask`)[target].
/// `mask` lists permitted columns; empty means all columns. Columns outside
/// the mask receive exactly zero gradient.
Var masked_cross_entropy(Tape& t, Var logits, std::span<const std::size_t> targets,
                         std::span<const std::size_t> mask = {});

/// Weighted mean binary cross-entropy on raw logits [n,1].
Var bce_with_logits(Tape& t, Var logits, std::span<const double> targets,
                    std::span<const double> weights = {});

}  // namespace d2l
