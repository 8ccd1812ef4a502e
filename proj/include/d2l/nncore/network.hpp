#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "d2l/nncore/rng.hpp"
#include "d2l/nncore/tape.hpp"

namespace d2l {

enum class Activation { identity, relu, sigmoid };

struct Dense {
  Parameter weight;  // [in, out]
  Parameter bias;    // [1, out]
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }
};

/// How a forward pass binds parameters onto the tape.
enum class Binding { trainable, frozen };

/// Plain stack of affine layers with elementwise activations.
class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, h1, ..., out}; one activation per layer. Fan-in scaled
  /// uniform init U(-1/sqrt(in), 1/sqrt(in)) for weights, zero biases.
  Mlp(const std::vector<std::size_t>& widths, const std::vector<Activation>& activations, Rng& rng);

  /// Runs the stack. If `hidden` is non-null, the post-activation output of
  /// every layer is appended to it.
  Var forward(Tape& t, Var x, Binding binding, std::vector<Var>* hidden = nullptr);
  Var forward(Tape& t, Var x, std::vector<Var>* hidden = nullptr) const;

  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }
  std::size_t parameter_count() const;

  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }
  std::vector<Parameter*> parameters();
  void zero_grad();

  /// Flat weight/bias tensors in layer order (W0, b0, W1, b1, ...).
  std::vector<Tensor> export_tensors() const;
  /// Inverse of export_tensors; shapes must match.
  void import_tensors(const std::vector<Tensor>& tensors);
  std::uint64_t hash() const;

 private:
  std::vector<Dense> layers_;
};

struct ForwardResult {
  Var logits;
  Var features;
};

struct Inference {
  Tensor logits;
  Tensor features;
};

struct NetworkShape {
  std::size_t input_dim = 144;
  std::vector<std::size_t> hidden = {128, 64};
  std::size_t head_width = 16;
};

/// The continual classifier: rectifier MLP whose last hidden activation is
/// the feature embedding and whose output layer is the head bank.
class Network {
 public:
  Network() = default;
  Network(const NetworkShape& shape, Rng& rng);

  ForwardResult forward(Tape& t, Var batch, Binding binding = Binding::trainable);
  /// No-gradient evaluation.
  Inference infer(const Tensor& batch) const;

  std::size_t input_dim() const { return body_.in_dim(); }
  std::size_t head_width() const { return body_.out_dim(); }
  std::size_t feature_dim() const { return body_.layers().back().in_dim(); }

  /// Adds `count` output neurons. Each new weight column and bias is drawn
  /// from N(mean, std) of the existing head weights.
  void append_heads(std::size_t count, Rng& rng);

  Mlp& body() { return body_; }
  const Mlp& body() const { return body_; }
  std::vector<Parameter*> parameters() { return body_.parameters(); }
  void zero_grad() { body_.zero_grad(); }
  std::uint64_t hash() const { return body_.hash(); }

 private:
  Mlp body_;
};

/// Row-wise softmax over all columns.
Tensor softmax_rows(const Tensor& logits);

}  // namespace d2l
