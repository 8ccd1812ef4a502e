#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "../support/finite_diff.hpp"
#include "d2l/nncore/checkpoint.hpp"
#include "d2l/nncore/network.hpp"
#include "d2l/nncore/optimizer.hpp"

using namespace d2l;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = rng.normal() * scale;
  return t;
}

std::vector<bool> relu_pattern(const Mlp& mlp, const Tensor& x) {
  Tape t;
  std::vector<Var> hidden;
  mlp.forward(t, t.constant_ref(x), &hidden);
  std::vector<bool> out;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    if (mlp.layers()[l].activation != Activation::relu) continue;
    for (double v : t.value(hidden[l]).values()) out.push_back(v > 0.0);
  }
  return out;
}

}  // namespace

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  Rng rng(1);
  Network net(NetworkShape{12, {8, 6}, 5}, rng);
  for (Parameter* p : net.parameters()) p->value.fill(0.0);
  const Inference out = net.infer(random_matrix(3, 12, rng));
  for (double v : out.logits.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(out.logits.shape(), (Shape{3, 5}));
  EXPECT_EQ(out.features.shape(), (Shape{3, 6}));
}

TEST(Forward, IdentityAffineLayerPassesInputThrough) {
  Rng rng(2);
  Mlp mlp({4, 4}, {Activation::identity}, rng);
  Tensor& w = mlp.layers()[0].weight.value;
  w.fill(0.0);
  for (std::size_t i = 0; i < 4; ++i) w.at(i, i) = 1.0;
  const Tensor v = Tensor({1, 4}, {0.5, -1.5, 2.0, 3.25});
  Tape t;
  EXPECT_EQ(t.value(mlp.forward(t, t.constant_ref(v))), v);
}

TEST(Forward, DeterministicAcrossCalls) {
  Rng a(7), b(7);
  Network n1(NetworkShape{}, a), n2(NetworkShape{}, b);
  Rng data(3);
  const Tensor x = random_matrix(4, 144, data);
  EXPECT_EQ(n1.infer(x).logits, n2.infer(x).logits);
  EXPECT_EQ(n1.infer(x).logits, n1.infer(x).logits);
}

TEST(Forward, RejectsWrongInputWidth) {
  Rng rng(1);
  Network net(NetworkShape{10, {4}, 3}, rng);
  EXPECT_THROW(net.infer(Tensor::matrix(2, 9)), ShapeError);
}

TEST(CrossEntropy, UniformLogitsGiveLogOfMaskSize) {
  for (std::size_t m : {2u, 4u, 7u, 16u}) {
    Tape t;
    Var z = t.constant(Tensor::matrix(3, 16, 0.37));
    std::vector<std::size_t> mask;
    for (std::size_t j = 0; j < m; ++j) mask.push_back(j);
    std::vector<std::size_t> y{0, m - 1, m / 2};
    Var loss = masked_cross_entropy(t, z, y, mask);
    EXPECT_NEAR(t.value(loss)[0], std::log(static_cast<double>(m)), 1e-12);
  }
}

TEST(CrossEntropy, SaturatedTwoClassMatchesClosedForm) {
  Tape t;
  Var z = t.constant(Tensor({1, 2}, {10.0, -10.0}));
  std::vector<std::size_t> y{0};
  // -log(e^10 / (e^10 + e^-10)) = log1p(e^-20)
  EXPECT_NEAR(t.value(masked_cross_entropy(t, z, y))[0], std::log1p(std::exp(-20.0)), 1e-22);
  EXPECT_NEAR(t.value(masked_cross_entropy(t, z, y))[0], 2.06e-9, 0.01e-9);
}

TEST(CrossEntropy, TargetOutsideMaskIsAnError) {
  Tape t;
  Var z = t.constant(Tensor::matrix(1, 4));
  std::vector<std::size_t> y{1}, mask{2, 3};
  EXPECT_THROW(masked_cross_entropy(t, z, y, mask), PreconditionError);
}

TEST(CrossEntropy, GradientOutsideMaskIsExactlyZero) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    Var z = t.input(random_matrix(5, 8, rng, 3.0));
    std::vector<std::size_t> mask{1, 4, 6};
    std::vector<std::size_t> y;
    for (int i = 0; i < 5; ++i) y.push_back(mask[rng.below(mask.size())]);
    t.backward(masked_cross_entropy(t, z, y, mask));
    const Tensor& g = t.grad(z);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j : {0u, 2u, 3u, 5u, 7u}) EXPECT_EQ(g.at(i, j), 0.0);
  }
}

TEST(Backward, SumOfParametersGivesOnes) {
  Parameter p(Tensor::matrix(3, 4, 0.5));
  Tape t;
  t.backward(sum_all(t, t.parameter(p)));
  for (double g : p.grad.values()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, UntouchedParameterGradientStaysZero) {
  Parameter used(Tensor::matrix(2, 2, 1.0)), unused(Tensor::matrix(2, 2, 1.0));
  Tape t;
  t.parameter(unused);
  t.backward(sum_all(t, t.parameter(used)));
  for (double g : unused.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Parameter p(Tensor::matrix(2, 2, 1.0));
  Tape t;
  Var v = t.parameter(p);
  EXPECT_THROW(t.backward(v), ShapeError);
}

TEST(Backward, IndependentLossesDoNotInterfere) {
  Rng rng(5);
  Network net(NetworkShape{6, {5}, 3}, rng);
  const Tensor x1 = random_matrix(4, 6, rng), x2 = random_matrix(4, 6, rng);
  const std::vector<std::size_t> y1{0, 1, 2, 0}, y2{2, 2, 1, 0};

  auto grads_of = [&](const Tensor& x, const std::vector<std::size_t>& y) {
    net.zero_grad();
    Tape t;
    t.backward(masked_cross_entropy(t, net.forward(t, t.constant_ref(x)).logits, y));
    std::vector<Tensor> g;
    for (Parameter* p : net.parameters()) g.push_back(p->grad);
    return g;
  };
  const auto g1 = grads_of(x1, y1);
  const auto g2 = grads_of(x2, y2);
  // A separate loss on a separate tape leaves the first result reproducible.
  EXPECT_EQ(grads_of(x1, y1), g1);

  // Accumulating both backward passes gives exactly the elementwise sum.
  net.zero_grad();
  for (int k = 0; k < 2; ++k) {
    Tape t;
    const Tensor& x = k == 0 ? x1 : x2;
    const auto& y = k == 0 ? y1 : y2;
    t.backward(masked_cross_entropy(t, net.forward(t, t.constant_ref(x)).logits, y));
  }
  const auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < g1[k].size(); ++i) EXPECT_NEAR(params[k]->grad[i], g1[k][i] + g2[k][i], 1e-15);
}

// Finite-difference agreement on every layer type over 100 seeds.
TEST(GradientCheck, EveryLayerTypeMatchesFiniteDifferences) {
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 1000);
    Mlp mlp({6, 7, 5, 4, 3}, {Activation::relu, Activation::sigmoid, Activation::identity, Activation::identity},
            rng);
    const Tensor x = random_matrix(4, 6, rng);
    const std::vector<std::size_t> y{0, 2, 1, 2};
    const std::vector<std::size_t> mask{0, 1, 2};

    auto loss_value = [&] {
      Tape t;
      return t.value(masked_cross_entropy(t, mlp.forward(t, t.constant_ref(x)), y, mask))[0];
    };
    mlp.zero_grad();
    {
      Tape t;
      t.backward(masked_cross_entropy(t, mlp.forward(t, t.constant_ref(x), Binding::trainable), y, mask));
    }
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (Parameter* p : mlp.parameters()) {
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        coords.push_back(&p->value[i]);
        analytic.push_back(p->grad[i]);
      }
    }
    const auto r = testkit::central_difference(coords, analytic, loss_value, [&] { return relu_pattern(mlp, x); });
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
    skipped += r.skipped;
  }
  EXPECT_LE(worst, 1e-4);
  EXPECT_LT(skipped, checked / 100);
}

TEST(GradientCheck, ElementwiseAndStructuralOps) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 77);
    Tensor a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng), row = random_matrix(1, 2, rng);
    Tensor target = random_matrix(3, 6, rng);
    std::vector<double> bce_y{1.0, 0.0, 1.0}, bce_w{0.5, 2.0, 1.0};
    auto build = [&](Tape& t, Var va, Var vb, Var vr) {
      Var prod = mul(t, va, sub(t, vb, scale(t, va, 0.3)));
      Var sum = add(t, prod, sigmoid(t, vb));
      std::vector<Var> parts{sum, broadcast_rows(t, vr, 3)};
      Var cat = concat_cols(t, parts);
      Var l1 = mse(t, cat, t.constant_ref(target));
      Var col = matmul(t, cat, t.constant(Tensor::matrix(6, 1, 0.2)));
      Var l2 = bce_with_logits(t, col, bce_y, bce_w);
      return add(t, l1, l2);
    };
    Tape t;
    Var va = t.input(a), vb = t.input(b), vr = t.input(row);
    t.backward(build(t, va, vb, vr));
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (auto [tensor, var] : {std::pair{&a, va}, std::pair{&b, vb}, std::pair{&row, vr}}) {
      for (std::size_t i = 0; i < tensor->size(); ++i) {
        coords.push_back(&(*tensor)[i]);
        analytic.push_back(t.grad(var)[i]);
      }
    }
    auto f = [&] {
      Tape t2;
      return t2.value(build(t2, t2.constant_ref(a), t2.constant_ref(b), t2.constant_ref(row)))[0];
    };
    worst = std::max(worst, testkit::central_difference(coords, analytic, f).max_rel_error);
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Optimizer, PlainStepSubtractsScaledGradient) {
  Parameter p(Tensor::matrix(1, 1, 1.0));
  p.grad[0] = 1.0;
  Optimizer opt(OptimizerKind::sgd, 0.1);
  std::vector<Parameter*> ps{&p};
  opt.step(ps);
  EXPECT_DOUBLE_EQ(p.value[0], 0.9);
}

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    Parameter p(Tensor({1, 3}, {0.1, -2.0, 5.0}));
    const Tensor before = p.value;
    Optimizer opt(kind, 0.5);
    std::vector<Parameter*> ps{&p};
    opt.step(ps);
    EXPECT_EQ(p.value, before);
  }
}

TEST(Optimizer, AdamStepApproachesLearningRateUnderConstantGradient) {
  Parameter p(Tensor::matrix(1, 1, 0.0));
  Optimizer opt(OptimizerKind::adam, 0.01);
  std::vector<Parameter*> ps{&p};
  double last_step = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double before = p.value[0];
    p.grad[0] = 0.5;
    opt.step(ps);
    last_step = before - p.value[0];
  }
  // Bias-corrected moments are exact for a constant gradient: step = lr*g/(|g|+eps).
  EXPECT_NEAR(last_step, 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(last_step, 0.01, 1e-9);
  EXPECT_EQ(opt.step_count(), 1000u);
}

TEST(Optimizer, NonFiniteGradientIsAnError) {
  Parameter p(Tensor::matrix(1, 2, 0.0));
  p.grad[1] = std::numeric_limits<double>::quiet_NaN();
  Optimizer opt(OptimizerKind::sgd, 0.1);
  std::vector<Parameter*> ps{&p};
  EXPECT_THROW(opt.step(ps), NumericError);
}

TEST(Determinism, SameSeedGivesBitwiseIdenticalParametersAfterTraining) {
  auto train = [](std::uint64_t seed) {
    Rng rng(seed);
    Network net(NetworkShape{10, {8, 6}, 4}, rng);
    Optimizer opt(OptimizerKind::sgd, 0.03);
    for (int step = 0; step < 25; ++step) {
      Tensor x = random_matrix(8, 10, rng);
      std::vector<std::size_t> y;
      for (int i = 0; i < 8; ++i) y.push_back(rng.below(4));
      net.zero_grad();
      Tape t;
      t.backward(masked_cross_entropy(t, net.forward(t, t.constant_ref(x)).logits, y));
      const auto ps = net.parameters();
      opt.step(ps);
    }
    return net.body().export_tensors();
  };
  EXPECT_EQ(train(42), train(42));
  EXPECT_NE(train(42), train(43));
}

TEST(Tensor, NonFiniteOpOutputIsAnError) {
  Tape t;
  Var a = t.constant(Tensor::matrix(1, 1, 1e308));
  EXPECT_THROW(scale(t, a, 10.0), NumericError);
}

TEST(Checkpoint, RoundTripPreservesTensors) {
  Rng rng(9);
  Network net(NetworkShape{144, {128, 64}, 16}, rng);
  std::stringstream ss;
  write_tensors(ss, net.body().export_tensors());
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "D2L1");
  Rng other(10);
  Network restored(NetworkShape{144, {128, 64}, 16}, other);
  restored.body().import_tensors(read_tensors(ss));
  EXPECT_EQ(restored.hash(), net.hash());
}

TEST(Checkpoint, RejectsForeignBytes) {
  std::stringstream ss("NOPE\x01\x00\x00\x00");
  EXPECT_THROW(read_tensors(ss), CheckpointError);
  std::stringstream truncated(std::string("D2L1\x01\x00\x00\x00\x02\x00", 10));
  EXPECT_THROW(read_tensors(truncated), CheckpointError);
}

TEST(Network, AppendHeadsDrawsFromExistingWeightStatistics) {
  Rng rng(4);
  Network net(NetworkShape{20, {64}, 10}, rng);
  net.append_heads(6, rng);
  EXPECT_EQ(net.head_width(), 16u);
  const Tensor& w = net.body().layers().back().weight.value;
  double mean_new = 0.0;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 10; j < 16; ++j) mean_new += w.at(i, j);
  mean_new /= static_cast<double>(w.rows() * 6);
  // Fan-in init is U(-1/8, 1/8): mean 0, sd ~0.072.
  EXPECT_NEAR(mean_new, 0.0, 0.02);
}
