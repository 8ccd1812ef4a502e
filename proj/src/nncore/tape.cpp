#include "d2l/nncore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace d2l {

Var Tape::constant(Tensor value) {
  value.require_finite("constant");
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  value.require_finite("input");
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value_of(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

const Tensor& Tape::value(Var v) const { return value_of(v.id); }

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.param) return n.param->grad;
  return n.grad;
}

Tensor& Tape::grad_mut(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  if (n.grad.shape() != value_of(id).shape()) n.grad = Tensor(value_of(id).shape(), 0.0);
  return n.grad;
}

Var Tape::push(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  value.require_finite("op output");
  Node n;
  n.owned = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [this](std::size_t p) { return nodes_[p].requires_grad; });
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(lv.shape()));
  if (!nodes_[loss.id].requires_grad) return;
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (!n.param && n.requires_grad) n.grad = Tensor(value_of(i).shape(), 0.0);
  }
  grad_mut(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (nodes_[i].param) nodes_[i].param->grad.require_finite("parameter gradient");
  }
}

namespace {

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_string(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

Tensor scalar(double v) { return Tensor({1, 1}, v); }

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require_2d(A, "matmul");
  require_2d(B, "matmul");
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  if (B.rows() != k) {
    throw ShapeError("matmul: " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = &out[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &B[p * m];
      for (std::size_t j = 0; j < m; ++j) o[j] += av * brow[j];
    }
  }
  return t.push(std::move(out), {a.id, b.id}, [a, b, n, k, m](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    const Tensor& Av = tp.value_of(a.id);
    const Tensor& Bv = tp.value_of(b.id);
    if (tp.needs(a.id)) {
      Tensor& gA = tp.grad_mut(a.id);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += G[i * m + j] * Bv[p * m + j];
          gA[i * k + p] += s;
        }
      }
    }
    if (tp.needs(b.id)) {
      Tensor& gB = tp.grad_mut(b.id);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = Av[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gB[p * m + j] += av * G[i * m + j];
        }
      }
    }
  });
}

Var add_bias(Tape& t, Var a, Var bias) {
  const Tensor& A = t.value(a);
  const Tensor& b = t.value(bias);
  require_2d(A, "add_bias");
  if (b.rows() != 1 || b.cols() != A.cols()) {
    throw ShapeError("add_bias: bias " + shape_string(b.shape()) + " for " + shape_string(A.shape()));
  }
  Tensor out = A;
  const std::size_t n = A.rows(), m = A.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += b[j];
  return t.push(std::move(out), {a.id, bias.id}, [a, bias, n, m](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    if (tp.needs(a.id)) {
      Tensor& gA = tp.grad_mut(a.id);
      for (std::size_t i = 0; i < n * m; ++i) gA[i] += G[i];
    }
    if (tp.needs(bias.id)) {
      Tensor& gb = tp.grad_mut(bias.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += G[i * m + j];
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  require_same(t.value(a), t.value(b), "add");
  Tensor out = t.value(a);
  const Tensor& B = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return t.push(std::move(out), {a.id, b.id}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    for (std::size_t id : {a.id, b.id}) {
      if (!tp.needs(id)) continue;
      Tensor& g = tp.grad_mut(id);
      for (std::size_t i = 0; i < G.size(); ++i) g[i] += G[i];
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same(t.value(a), t.value(b), "sub");
  Tensor out = t.value(a);
  const Tensor& B = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return t.push(std::move(out), {a.id, b.id}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    if (tp.needs(a.id)) {
      Tensor& g = tp.grad_mut(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) g[i] += G[i];
    }
    if (tp.needs(b.id)) {
      Tensor& g = tp.grad_mut(b.id);
      for (std::size_t i = 0; i < G.size(); ++i) g[i] -= G[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same(t.value(a), t.value(b), "mul");
  Tensor out = t.value(a);
  const Tensor& B = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return t.push(std::move(out), {a.id, b.id}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    if (tp.needs(a.id)) {
      Tensor& g = tp.grad_mut(a.id);
      const Tensor& Bv = tp.value_of(b.id);
      for (std::size_t i = 0; i < G.size(); ++i) g[i] += G[i] * Bv[i];
    }
    if (tp.needs(b.id)) {
      Tensor& g = tp.grad_mut(b.id);
      const Tensor& Av = tp.value_of(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) g[i] += G[i] * Av[i];
    }
  });
}

Var scale(Tape& t, Var a, double s) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v *= s;
  return t.push(std::move(out), {a.id}, [a, s](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    Tensor& g = tp.grad_mut(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) g[i] += s * G[i];
  });
}

Var relu(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return t.push(std::move(out), {a.id}, [a](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    const Tensor& X = tp.value_of(a.id);
    Tensor& g = tp.grad_mut(a.id);
    for (std::size_t i = 0; i < G.size(); ++i)
      if (X[i] > 0.0) g[i] += G[i];
  });
}

Var sigmoid(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return t.push(std::move(out), {a.id}, [a](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    const Tensor& Y = tp.value_of(self);
    Tensor& g = tp.grad_mut(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) g[i] += G[i] * Y[i] * (1.0 - Y[i]);
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = t.value(parts[0]).rows();
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& v = t.value(p);
    require_2d(v, "concat_cols");
    if (v.rows() != n) throw ShapeError("concat_cols: row mismatch");
    widths.push_back(v.cols());
    ids.push_back(p.id);
    total += v.cols();
  }
  Tensor out = Tensor::matrix(n, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = t.value(parts[k]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + offset + j] = v[i * widths[k] + j];
    offset += widths[k];
  }
  return t.push(std::move(out), ids, [ids, widths, n, total](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs(ids[k])) {
        Tensor& g = tp.grad_mut(ids[k]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += G[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var broadcast_rows(Tape& t, Var row, std::size_t n) {
  const Tensor& r = t.value(row);
  if (r.rank() != 2 || r.rows() != 1) throw ShapeError("broadcast_rows: expected [1,m]");
  const std::size_t m = r.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = r[j];
  return t.push(std::move(out), {row.id}, [row, n, m](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_of(self);
    Tensor& g = tp.grad_mut(row.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) g[j] += G[i * m + j];
  });
}

Var sum_all(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  double s = 0.0;
  for (double v : A.values()) s += v;
  return t.push(scalar(s), {a.id}, [a](Tape& tp, std::size_t self) {
    const double g0 = tp.grad_of(self)[0];
    Tensor& g = tp.grad_mut(a.id);
    for (double& v : g.values()) v += g0;
  });
}

Var mean_all(Tape& t, Var a) {
  const std::size_t n = t.value(a).size();
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  return scale(t, sum_all(t, a), 1.0 / static_cast<double>(n));
}

Var mse(Tape& t, Var a, Var b) {
  Var d = sub(t, a, b);
  return mean_all(t, mul(t, d, d));
}

Var masked_cross_entropy(Tape& t, Var logits, std::span<const std::size_t> targets,
                         std::span<const std::size_t> mask) {
  const Tensor& Z = t.value(logits);
  require_2d(Z, "masked_cross_entropy");
  const std::size_t n = Z.rows(), m = Z.cols();
  if (targets.size() != n) throw ShapeError("masked_cross_entropy: target count != batch size");
  if (n == 0) throw ShapeError("masked_cross_entropy: empty batch");

  std::vector<std::size_t> cols;
  if (mask.empty()) {
    cols.resize(m);
    for (std::size_t j = 0; j < m; ++j) cols[j] = j;
  } else {
    cols.assign(mask.begin(), mask.end());
  }
  std::vector<char> in_mask(m, 0);
  for (std::size_t c : cols) {
    if (c >= m) throw ShapeError("masked_cross_entropy: mask column out of range");
    in_mask[c] = 1;
  }
  for (std::size_t y : targets) {
    if (y >= m || !in_mask[y]) {
      throw PreconditionError("masked_cross_entropy: target " + std::to_string(y) + " outside permitted heads");
    }
  }

  // Softmax restricted to the mask; probabilities kept for the backward pass.
  Tensor probs = Tensor::matrix(n, m);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arg = cols[0];
    for (std::size_t c : cols)
      if (Z[i * m + c] > Z[i * m + arg]) arg = c;
    const double mx = Z[i * m + arg];
    // log-sum-exp as mx + log1p(sum of the others), exact for saturated rows
    double rest = 0.0;
    for (std::size_t c : cols)
      if (c != arg) rest += std::exp(Z[i * m + c] - mx);
    const double lse = mx + std::log1p(rest);
    for (std::size_t c : cols) probs[i * m + c] = std::exp(Z[i * m + c] - lse);
    loss += (mx - Z[i * m + targets[i]]) + std::log1p(rest);
  }
  loss /= static_cast<double>(n);

  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return t.push(scalar(loss), {logits.id},
                [logits, probs = std::move(probs), tgt = std::move(tgt), cols, n, m](Tape& tp, std::size_t self) {
                  const double g0 = tp.grad_of(self)[0] / static_cast<double>(n);
                  Tensor& g = tp.grad_mut(logits.id);
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t c : cols) g[i * m + c] += g0 * probs[i * m + c];
                    g[i * m + tgt[i]] -= g0;
                  }
                });
}

Var bce_with_logits(Tape& t, Var logits, std::span<const double> targets, std::span<const double> weights) {
  const Tensor& Z = t.value(logits);
  const std::size_t n = Z.size();
  if (targets.size() != n) throw ShapeError("bce_with_logits: target count mismatch");
  if (!weights.empty() && weights.size() != n) throw ShapeError("bce_with_logits: weight count mismatch");
  std::vector<double> w(n, 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  double wsum = 0.0;
  for (double v : w) wsum += v;
  if (wsum <= 0.0) throw PreconditionError("bce_with_logits: weights sum to zero");

  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = Z[i];
    // log(1 + exp(-|z|)) + max(z, 0) - z*y
    loss += w[i] * (std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * targets[i]);
  }
  loss /= wsum;
  std::vector<double> y(targets.begin(), targets.end());
  return t.push(scalar(loss), {logits.id}, [logits, y = std::move(y), w = std::move(w), wsum](Tape& tp, std::size_t self) {
    const double g0 = tp.grad_of(self)[0] / wsum;
    const Tensor& Zv = tp.value_of(logits.id);
    Tensor& g = tp.grad_mut(logits.id);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double z = Zv[i];
      const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      g[i] += g0 * w[i] * (s - y[i]);
    }
  });
}

}  // namespace d2l
