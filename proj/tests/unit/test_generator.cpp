#include <gtest/gtest.h>

#include <cmath>

#include "../support/finite_diff.hpp"
#include "d2l/generator/generator.hpp"

using namespace d2l;

namespace {

struct Assets {
  TaskStream bench = make_benchmark({.seed = 0});
  TaskStream bank = make_disjoint_bank(free_cells(bench.classes), 40, 12, 11, bench.classes);
  PretrainReport report;
  FrozenGenerator gen;
  Assets() { gen = pretrain_generator(bank, PretrainConfig{.seed = 3}, &report); }
};

const Assets& assets() {
  static const Assets a;
  return a;
}

Tensor noise(std::size_t n, std::size_t d, Rng& rng) {
  Tensor t = Tensor::matrix(n, d);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

}  // namespace

TEST(TextEmbed, DeterministicUnitNormAndDistinct) {
  const Tensor a = text_embed("blob-3"), b = text_embed("blob-3"), c = text_embed("ring-3");
  EXPECT_EQ(a, b);
  double na = 0, dot = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] * a[i];
    dot += a[i] * c[i];
  }
  EXPECT_NEAR(std::sqrt(na), 1.0, 1e-12);
  EXPECT_LT(dot, 1.0);
  EXPECT_THROW(text_embed(""), PreconditionError);
}

TEST(Pretrain, BeatsMeanImagePredictor) {
  const auto& r = assets().report;
  RecordProperty("holdout_mse", std::to_string(r.holdout_mse));
  RecordProperty("mean_image_mse", std::to_string(r.mean_image_mse));
  EXPECT_LT(r.holdout_mse, r.mean_image_mse);
  EXPECT_LT(r.final_loss, r.first_loss);
}

TEST(Pretrain, QualityMedianCalibrated) {
  const auto& a = assets();
  std::vector<double> q = a.gen.quality(a.bank.all_train().images);
  std::sort(q.begin(), q.end());
  // lambda is fitted to the error at ascending rank n/2, i.e. quality rank n-1-n/2
  EXPECT_NEAR(q[q.size() - 1 - q.size() / 2], 0.8, 1e-12);
}

TEST(Pretrain, CeilingViolationIsAnError) {
  const auto& a = assets();
  PretrainConfig cfg{.steps = 5, .loss_ceiling = 1e-6};
  EXPECT_THROW(pretrain_generator(a.bank, cfg), NumericError);
}

TEST(Generate, DeterministicAndInRange) {
  const auto& a = assets();
  Rng rng(1);
  const Tensor x = a.bench.tasks[0].test.images.gather_rows(std::vector<std::size_t>{0, 5, 9});
  const Prompt p("blob-1", 16, 16);
  const Tensor eps = noise(3, 8, rng);
  const Tensor y1 = a.gen.generate(x, p, eps), y2 = a.gen.generate(x, p, eps);
  EXPECT_EQ(y1, y2);
  for (double v : y1.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Generate, NoiseChannelIsNonDegenerate) {
  const auto& a = assets();
  Rng rng(2);
  const Tensor x = a.bench.tasks[0].test.images.gather_rows(std::vector<std::size_t>{0});
  const Prompt p("blob-1", 16, 16);
  const Tensor y1 = a.gen.generate(x, p, noise(1, 8, rng)), y2 = a.gen.generate(x, p, noise(1, 8, rng));
  double dist = 0;
  for (std::size_t i = 0; i < y1.size(); ++i) dist += std::abs(y1[i] - y2[i]);
  EXPECT_GT(dist / static_cast<double>(y1.size()), 0.0);
}

TEST(Generate, UsesItsCondition) {
  const auto& a = assets();
  const SampleSet test = a.bench.all_test();
  const std::size_t n = test.size();
  const Tensor zero_soft = Tensor::matrix(1, 16), zero_text = Tensor::matrix(1, 16);
  const Tensor y = a.gen.generate(test.images, zero_soft, zero_text, Tensor::matrix(n, 8));
  double own = 0, other = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + n / 2) % n;  // different class: classes are contiguous blocks
    for (std::size_t k = 0; k < 144; ++k) {
      own += std::abs(y.at(i, k) - test.images.at(i, k));
      other += std::abs(y.at(i, k) - test.images.at(j, k));
    }
  }
  EXPECT_LT(own, other);
}

TEST(Generate, GradientWrtSoftPromptMatchesFiniteDifferences) {
  const auto& a = assets();
  double worst = 0.0;
  std::size_t skipped = 0, checked = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const SampleSet& pool = a.bench.tasks[0].train;
    const Tensor x = pool.images.gather_rows(std::vector<std::size_t>{rng.below(pool.size()), rng.below(pool.size())});
    Tensor soft = noise(1, 16, rng);
    const Tensor text = text_embed("stripe-" + std::to_string(seed));
    const Tensor eps = noise(2, 8, rng);
    const Tensor w = noise(2, 144, rng);  // random projection of the output to a scalar
    auto build = [&](Tape& t, Var s) {
      const Var y = a.gen.generate(t, t.constant_ref(x), s, t.constant_ref(text), t.constant_ref(eps));
      return sum_all(t, mul(t, y, t.constant_ref(w)));
    };
    Tape t;
    const Var s = t.input(soft);
    t.backward(build(t, s));
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < soft.size(); ++i) {
      coords.push_back(&soft[i]);
      analytic.push_back(t.grad(s)[i]);
    }
    auto f = [&] {
      Tape t2;
      return t2.value(build(t2, t2.constant_ref(soft)))[0];
    };
    auto pattern = [&] {
      Tape t2;
      std::vector<Var> hidden;
      const Var parts[] = {a.gen.encoder().forward(t2, t2.constant_ref(x)), broadcast_rows(t2, t2.constant_ref(soft), 2),
                           broadcast_rows(t2, t2.constant_ref(text), 2), t2.constant_ref(eps)};
      a.gen.decoder().forward(t2, concat_cols(t2, parts), &hidden);
      std::vector<bool> on;
      for (double v : t2.value(hidden[0]).values()) on.push_back(v > 0);
      return on;
    };
    const auto r = testkit::central_difference(coords, analytic, f, pattern);
    worst = std::max(worst, r.max_rel_error);
    skipped += r.skipped;
    checked += r.checked;
  }
  EXPECT_LE(worst, 1e-4);
  EXPECT_GT(checked, 1500u);
}

TEST(Generate, FrozenWeightsReceiveNoGradient) {
  FrozenGenerator g = assets().gen;
  for (Parameter* p : g.encoder().parameters()) p->grad.fill(0.0);
  for (Parameter* p : g.decoder().parameters()) p->grad.fill(0.0);
  const std::uint64_t before = g.hash();
  Tape t;
  const Var s = t.input(Tensor::matrix(1, 16, 0.3));
  const Var y = g.generate(t, t.constant(Tensor::matrix(4, 144, 0.5)), s, t.constant(text_embed("x")),
                           t.constant(Tensor::matrix(4, 8, 0.1)));
  t.backward(sum_all(t, y));
  for (Parameter* p : g.encoder().parameters())
    for (double v : p->grad.values()) EXPECT_EQ(v, 0.0);
  for (Parameter* p : g.decoder().parameters())
    for (double v : p->grad.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.hash(), before);
}

TEST(Checkpoint, GeneratorRoundTrip) {
  const auto& a = assets();
  const auto path = std::filesystem::temp_directory_path() / "d2l_gen_roundtrip.bin";
  save_generator(a.gen, PretrainConfig{.seed = 3}, a.report, path);
  const FrozenGenerator back = load_generator(path);
  EXPECT_EQ(back.hash(), a.gen.hash());
  EXPECT_TRUE(std::filesystem::exists(path.string() + ".json"));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}
