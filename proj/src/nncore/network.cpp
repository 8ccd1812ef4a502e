#include "d2l/nncore/network.hpp"

#include <cmath>
#include <limits>

namespace d2l {

Mlp::Mlp(const std::vector<std::size_t>& widths, const std::vector<Activation>& activations, Rng& rng) {
  if (widths.size() < 2 || activations.size() != widths.size() - 1) {
    throw ShapeError("Mlp: need one activation per layer");
  }
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    // variance 2/in ahead of a rectifier, 1/in otherwise
    const double gain = activations[l] == Activation::relu ? 6.0 : 3.0;
    const double bound = std::sqrt(gain / static_cast<double>(in));
    Tensor w = Tensor::matrix(in, out);
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    layers_.push_back(Dense{Parameter(std::move(w)), Parameter(Tensor::matrix(1, out)), activations[l]});
  }
}

namespace {
Var apply_activation(Tape& t, Var x, Activation a) {
  switch (a) {
    case Activation::relu:
      return relu(t, x);
    case Activation::sigmoid:
      return sigmoid(t, x);
    case Activation::identity:
      break;
  }
  return x;
}
}  // namespace

Var Mlp::forward(Tape& t, Var x, Binding binding, std::vector<Var>* hidden) {
  if (binding == Binding::frozen) return static_cast<const Mlp&>(*this).forward(t, x, hidden);
  Var h = x;
  for (Dense& layer : layers_) {
    h = add_bias(t, matmul(t, h, t.parameter(layer.weight)), t.parameter(layer.bias));
    h = apply_activation(t, h, layer.activation);
    if (hidden) hidden->push_back(h);
  }
  return h;
}

Var Mlp::forward(Tape& t, Var x, std::vector<Var>* hidden) const {
  Var h = x;
  for (const Dense& layer : layers_) {
    h = add_bias(t, matmul(t, h, t.constant_ref(layer.weight.value)), t.constant_ref(layer.bias.value));
    h = apply_activation(t, h, layer.activation);
    if (hidden) hidden->push_back(h);
  }
  return h;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Dense& l : layers_) n += l.weight.value.size() + l.bias.value.size();
  return n;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (Dense& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void Mlp::zero_grad() {
  for (Dense& l : layers_) {
    l.weight.zero_grad();
    l.bias.zero_grad();
  }
}

std::vector<Tensor> Mlp::export_tensors() const {
  std::vector<Tensor> out;
  for (const Dense& l : layers_) {
    out.push_back(l.weight.value);
    out.push_back(l.bias.value);
  }
  return out;
}

void Mlp::import_tensors(const std::vector<Tensor>& tensors) {
  if (tensors.size() != 2 * layers_.size()) throw ShapeError("Mlp::import_tensors: layer count mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (tensors[2 * l].shape() != layers_[l].weight.value.shape() ||
        tensors[2 * l + 1].shape() != layers_[l].bias.value.shape()) {
      throw ShapeError("Mlp::import_tensors: shape mismatch at layer " + std::to_string(l));
    }
    layers_[l].weight = Parameter(tensors[2 * l]);
    layers_[l].bias = Parameter(tensors[2 * l + 1]);
  }
}

std::uint64_t Mlp::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Dense& l : layers_) {
    for (const Tensor* t : {&l.weight.value, &l.bias.value}) {
      for (std::size_t d : t->shape()) h = fnv1a(&d, sizeof d, h);
      h = fnv1a(t->values().data(), t->size() * sizeof(double), h);
    }
  }
  return h;
}

Network::Network(const NetworkShape& shape, Rng& rng) {
  std::vector<std::size_t> widths{shape.input_dim};
  std::vector<Activation> acts;
  for (std::size_t h : shape.hidden) {
    widths.push_back(h);
    acts.push_back(Activation::relu);
  }
  if (shape.hidden.empty()) throw ShapeError("Network: at least one hidden layer is required for features");
  widths.push_back(shape.head_width);
  acts.push_back(Activation::identity);
  body_ = Mlp(widths, acts, rng);
}

ForwardResult Network::forward(Tape& t, Var batch, Binding binding) {
  if (t.value(batch).cols() != input_dim()) {
    throw ShapeError("Network::forward: input width " + std::to_string(t.value(batch).cols()) + " != " +
                     std::to_string(input_dim()));
  }
  std::vector<Var> hidden;
  Var logits = body_.forward(t, batch, binding, &hidden);
  return {logits, hidden[hidden.size() - 2]};
}

Inference Network::infer(const Tensor& batch) const {
  if (batch.cols() != input_dim()) throw ShapeError("Network::infer: input width mismatch");
  Tape t;
  std::vector<Var> hidden;
  Var logits = body_.forward(t, t.constant_ref(batch), &hidden);
  return {t.value(logits), t.value(hidden[hidden.size() - 2])};
}

void Network::append_heads(std::size_t count, Rng& rng) {
  if (count == 0) return;
  Dense& head = body_.layers().back();
  const Tensor& W = head.weight.value;
  if (W.empty()) throw PreconditionError("append_heads: no existing head weights");
  double mean = 0.0;
  for (double v : W.values()) mean += v;
  mean /= static_cast<double>(W.size());
  double var = 0.0;
  for (double v : W.values()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(W.size()));

  const std::size_t in = W.rows(), out = W.cols(), wide = out + count;
  Tensor nw = Tensor::matrix(in, wide);
  Tensor nb = Tensor::matrix(1, wide);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out; ++j) nw[i * wide + j] = W[i * out + j];
  for (std::size_t j = 0; j < out; ++j) nb[j] = head.bias.value[j];
  for (std::size_t j = out; j < wide; ++j) {
    for (std::size_t i = 0; i < in; ++i) nw[i * wide + j] = rng.normal(mean, sd);
    nb[j] = rng.normal(mean, sd);
  }
  head.weight = Parameter(std::move(nw));
  head.bias = Parameter(std::move(nb));
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  const std::size_t n = logits.rows(), m = logits.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, logits[i * m + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += (out[i * m + j] = std::exp(logits[i * m + j] - mx));
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= s;
  }
  return out;
}

}  // namespace d2l
