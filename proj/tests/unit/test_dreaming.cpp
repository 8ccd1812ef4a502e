#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "d2l/dreaming/dreaming.hpp"
#include "../support/finite_diff.hpp"

using namespace d2l;

namespace {

// Benchmark task 1 learned by a classifier, plus a pretrained generator.
struct World {
  TaskStream bench = make_benchmark({.seed = 0});
  TaskStream bank = make_disjoint_bank(free_cells(bench.classes), 40, 12, 11, bench.classes);
  FrozenGenerator gen;
  Rng init{5}, data{6}, dream{7};
  Network net{NetworkShape{}, init};
  HeadTable table{16};
  ReplayBuffer buffer{200};

  World() {
    gen = pretrain_generator(bank, PretrainConfig{.seed = 3});
    const Task& t1 = bench.tasks[0];
    for (std::size_t i = 0; i < t1.classes.size(); ++i) table.assign_real(i, t1.classes[i]);
    TrainContext ctx{net, buffer, table, t1.classes, nullptr, data, dream, 1, nullptr};
    bootstrap_task1(ctx, t1.train, MethodConfig{});
  }

  // D_1 without class `cls`
  Tensor pool_without(std::size_t cls) const {
    const SampleSet& s = bench.tasks[0].train;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.labels[i] != cls) rows.push_back(i);
    return s.images.gather_rows(rows);
  }
};

const World& world() {
  static const World w;
  return w;
}

OracleNet constant_oracle(double logit) {
  Rng r(1);
  OracleNet o(32, r);
  auto& out = o.body().layers().back();
  out.weight.value.fill(0.0);
  out.bias.value.fill(logit);
  o.freeze();
  return o;
}

}  // namespace

TEST(PromptLoss, GradientMatchesFiniteDifferences) {
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng r(seed);
    const GeneratorDims dims;
    const FrozenGenerator g(dims, r);
    const Network net(NetworkShape{}, r);
    Tensor cond = Tensor::matrix(2, 144), eps = Tensor::matrix(2, dims.noise_dim);
    for (double& v : cond.values()) v = r.uniform();
    for (double& v : eps.values()) v = r.normal();
    Parameter p(Tensor::matrix(1, dims.soft_dim));
    for (double& v : p.value.values()) v = r.normal();
    const Tensor text = text_embed("probe-" + std::to_string(seed));
    const std::size_t target = r.below(16);

    auto f = [&] {
      Tape t;
      return t.value(prompt_loss(t, net, g, t.constant_ref(cond), t.constant_ref(p.value), t.constant_ref(text),
                                 t.constant_ref(eps), target))[0];
    };
    p.zero_grad();
    Tape t;
    t.backward(prompt_loss(t, net, g, t.constant_ref(cond), t.parameter(p), t.constant_ref(text), t.constant_ref(eps),
                           target));
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      coords.push_back(&p.value[i]);
      analytic.push_back(p.grad[i]);
    }
    // rectifier pattern of the generator decoder and the classifier body
    auto pattern = [&] {
      Tape t2;
      std::vector<Var> hg, hc;
      const Var parts[] = {g.encoder().forward(t2, t2.constant_ref(cond)), broadcast_rows(t2, t2.constant_ref(p.value), 2),
                           broadcast_rows(t2, t2.constant_ref(text), 2), t2.constant_ref(eps)};
      const Var img = g.decoder().forward(t2, concat_cols(t2, parts), &hg);
      net.body().forward(t2, img, &hc);
      std::vector<bool> on;
      for (const auto* hs : {&hg, &hc})
        for (const Var h : *hs)
          for (double v : t2.value(h).values()) on.push_back(v > 0);
      return on;
    };
    const auto check = testkit::central_difference(coords, analytic, f, pattern);
    worst = std::max(worst, check.max_rel_error);
    checked += check.checked;
  }
  EXPECT_GT(checked, 1000u);
  EXPECT_LE(worst, 1e-4);
}

TEST(OptimizePrompt, NeverStopRunsToCapAndLeavesModelsFrozen) {
  const World& w = world();
  const auto g0 = w.gen.hash(), n0 = w.net.hash();
  DreamConfig cfg;
  cfg.stop.kind = StopRuleKind::never;
  Rng r(3);
  const std::size_t cls = w.bench.tasks[0].classes[2];
  const PromptResult res =
      optimize_prompt(w.net, w.gen, *w.table.head_of_real(cls), w.bench.classes[cls].name(), w.pool_without(cls),
                      nullptr, cfg, r);
  ASSERT_EQ(res.iterations, 500u);
  EXPECT_FALSE(res.stopped);
  for (std::size_t i = 0; i < res.trajectory.records.size(); ++i) {
    const auto& rec = res.trajectory.records[i];
    EXPECT_EQ(rec.iteration, i);
    for (double v : rec.z.values()) EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(rec.z.diversity, 0.0);
    EXPECT_LE(std::abs(rec.z.ssim), 1.0);
  }
  EXPECT_EQ(res.trajectory.records.front().p_soft, Tensor::matrix(1, 16));
  EXPECT_EQ(w.gen.hash(), g0);
  EXPECT_EQ(w.net.hash(), n0);
}

TEST(OptimizePrompt, MovesTowardTarget) {
  const World& w = world();
  DreamConfig cfg;
  cfg.stop.kind = StopRuleKind::never;
  cfg.max_iterations = 60;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t cls = w.bench.tasks[0].classes[k];
    Rng r(10 + k);
    const PromptResult res = optimize_prompt(w.net, w.gen, *w.table.head_of_real(cls), w.bench.classes[cls].name(),
                                             w.pool_without(cls), nullptr, cfg, r);
    EXPECT_GT(res.stop_target_prob, res.trajectory.records.front().target_prob) << cls;
  }
}

TEST(OptimizePrompt, OracleRuleStopsOnceEnoughPredictions) {
  const World& w = world();
  const OracleNet yes = constant_oracle(5.0), no = constant_oracle(-5.0);
  DreamConfig cfg;
  cfg.max_iterations = 40;
  const std::size_t cls = w.bench.tasks[0].classes[0];
  const Tensor pool = w.pool_without(cls);
  Rng r1(1), r2(1);
  const PromptResult stop = optimize_prompt(w.net, w.gen, 0, "x", pool, &yes, cfg, r1);
  // predictions start at iteration 2; the 2-of-3 rule needs three of them
  EXPECT_TRUE(stop.stopped);
  EXPECT_EQ(stop.trajectory.stop_iteration, std::optional<std::size_t>(4));
  const PromptResult go = optimize_prompt(w.net, w.gen, 0, "x", pool, &no, cfg, r2);
  EXPECT_FALSE(go.stopped);
  EXPECT_EQ(go.iterations, 40u);
  // same stream: the stopped run is a prefix of the full one
  for (std::size_t i = 0; i < stop.iterations; ++i)
    EXPECT_EQ(stop.trajectory.records[i].p_soft, go.trajectory.records[i].p_soft);
  EXPECT_EQ(stop.prompt.soft(), stop.trajectory.records.back().p_soft);
}

TEST(OptimizePrompt, FixedRuleStopsAfterFourTargetPredictions) {
  const World& w = world();
  DreamConfig cfg;
  cfg.stop.kind = StopRuleKind::fixed_optimization;
  const std::size_t cls = w.bench.tasks[0].classes[1];
  const std::size_t head = *w.table.head_of_real(cls);
  Rng r(4);
  const PromptResult res =
      optimize_prompt(w.net, w.gen, head, w.bench.classes[cls].name(), w.pool_without(cls), nullptr, cfg, r);
  if (res.stopped) {
    const auto& rec = res.trajectory.records;
    ASSERT_GE(rec.size(), 4u);
    for (std::size_t i = rec.size() - 4; i < rec.size(); ++i) EXPECT_EQ(rec[i].prediction, head);
  } else {
    EXPECT_EQ(res.iterations, 500u);
  }
}

TEST(OptimizePrompt, Preconditions) {
  const World& w = world();
  DreamConfig cfg;
  Rng r(1);
  EXPECT_THROW(optimize_prompt(w.net, w.gen, 0, "x", w.pool_without(0), nullptr, cfg, r), PreconditionError);
  cfg.stop.kind = StopRuleKind::never;
  EXPECT_THROW(optimize_prompt(w.net, w.gen, 0, "x", Tensor::matrix(0, 144), nullptr, cfg, r), PreconditionError);
  EXPECT_THROW(optimize_prompt(w.net, w.gen, 16, "x", w.pool_without(0), nullptr, cfg, r), PreconditionError);
}

TEST(GenerateDreams, SizeRangeAndConditioning) {
  const World& w = world();
  Prompt p("blob-3", 16, 16);
  for (double& v : p.soft().values()) v = 0.3;
  Rng r(2);
  const Tensor d = generate_dream_class(w.gen, p, w.buffer, 50, r);
  ASSERT_EQ(d.rows(), 50u);
  for (double v : d.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  // two different conditions, same prompt and noise
  const Tensor cond = w.bench.tasks[0].train.images.gather_rows(std::vector<std::size_t>{0, 150});
  const Tensor out = w.gen.generate(cond, p, Tensor::matrix(2, 8));
  double dist = 0;
  for (std::size_t k = 0; k < 144; ++k) dist += std::abs(out.at(0, k) - out.at(1, k));
  EXPECT_GT(dist, 0.0);

  ReplayBuffer empty(10), buf(10);
  EXPECT_THROW(generate_dream_class(w.gen, p, empty, 5, r), PreconditionError);
  EXPECT_THROW(buf.reservoir_insert({std::vector<double>(d.row(0).begin(), d.row(0).end()), 0, Origin::dream}, r),
               PreconditionError);
}

TEST(MapDream, SingleHeadTieAndExclusion) {
  Rng r(8);
  Network net(NetworkShape{}, r);
  HeadTable table(16);
  for (std::size_t h = 0; h < 15; ++h) table.assign_real(h, h);
  Tensor x = Tensor::matrix(5, 144);
  for (double& v : x.values()) v = r.uniform();
  EXPECT_EQ(map_dream_class(net, x, table).head, 15u);
  const std::vector<std::size_t> excl{15};
  EXPECT_THROW(map_dream_class(net, x, table, excl), PreconditionError);

  // equal logits everywhere: the lowest available head wins
  Network flat(NetworkShape{}, r);
  flat.body().layers().back().weight.value.fill(0.0);
  flat.body().layers().back().bias.value.fill(0.0);
  HeadTable t2(16);
  t2.assign_real(0, 0);
  t2.assign_real(2, 1);
  EXPECT_EQ(map_dream_class(flat, x, t2).head, 1u);
  const std::vector<std::size_t> excl2{1, 3};
  EXPECT_EQ(map_dream_class(flat, x, t2, excl2).head, 4u);
}

TEST(MapDream, EqualsBruteForceOnRandomConfigurations) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng r(seed);
    Network net(NetworkShape{.hidden = {16, 8}, .head_width = 6}, r);
    for (double& v : net.body().layers().back().weight.value.values()) v = 3.0 * r.normal();
    HeadTable table(6);
    for (std::size_t h = 0; h < 6; ++h)
      if (r.uniform() < 0.4) table.assign_real(h, h);
    if (table.available_heads().empty()) continue;
    Tensor x = Tensor::matrix(5, 144);
    for (double& v : x.values()) v = r.uniform();
    const DreamMapping m = map_dream_class(net, x, table);
    EXPECT_EQ(m.head, brute_force_dream_head(net, x, m.candidates)) << seed;
  }
}

TEST(Inventory, ReplaceKeepsCountAndWidth) {
  Rng r(12);
  Network net(NetworkShape{}, r);
  HeadTable table(16);
  DreamInventory inv;
  for (std::size_t h = 0; h < 10; ++h) table.assign_real(h, h);
  auto make = [&](std::size_t n) {
    std::vector<NewDream> out(n);
    for (auto& d : out) {
      d.entry.prompt = Prompt("blob-1", 16, 16);
      d.images = Tensor::matrix(4, 144);
      for (double& v : d.images.values()) v = r.uniform();
    }
    return out;
  };
  const auto first = update_inventory(DreamStrategy::d2l_replace, make(6), 1, inv, table, net, r);
  EXPECT_EQ(inv.size(), 6u);
  EXPECT_TRUE(first.evicted.empty());
  inv.check_against(table);

  const auto second = update_inventory(DreamStrategy::d2l_replace, make(2), 2, inv, table, net, r);
  EXPECT_EQ(inv.size(), 6u);
  EXPECT_EQ(second.evicted.size(), 2u);
  EXPECT_EQ(table.width(), 16u);
  EXPECT_EQ(net.head_width(), 16u);
  EXPECT_NE(second.placed[0].second, second.placed[1].second);
  inv.check_against(table);

  const auto before = inv.ids();
  update_inventory(DreamStrategy::at_beginning, make(2), 3, inv, table, net, r);
  update_inventory(DreamStrategy::none, make(2), 3, inv, table, net, r);
  EXPECT_EQ(inv.ids(), before);
}

TEST(Inventory, IncrementalAppendsHeads) {
  Rng r(13);
  Network net(NetworkShape{}, r);
  HeadTable table(16);
  DreamInventory inv;
  for (std::size_t h = 0; h < 8; ++h) table.assign_real(h, h);
  std::size_t added = 0;
  for (std::size_t task = 1; task <= 4; ++task) {
    const std::size_t n = task == 1 ? 8 : 2;
    std::vector<NewDream> d(n);
    for (auto& x : d) x.images = Tensor::matrix(2, 144);
    const auto up = update_inventory(DreamStrategy::incremental, std::move(d), task, inv, table, net, r);
    EXPECT_EQ(up.appended_heads, n);
    added += n;
  }
  EXPECT_EQ(net.head_width(), 16u + added);
  EXPECT_EQ(table.width(), 16u + added);
  EXPECT_EQ(added, 14u);
  inv.check_against(table);
}

TEST(Inventory, StoredPromptsRegenerateStably) {
  const World& w = world();
  const std::size_t cls = w.bench.tasks[0].classes[3];
  DreamConfig cfg;
  cfg.stop.kind = StopRuleKind::never;
  cfg.max_iterations = 30;
  Rng r(21);
  const PromptResult res = optimize_prompt(w.net, w.gen, *w.table.head_of_real(cls), w.bench.classes[cls].name(),
                                           w.pool_without(cls), nullptr, cfg, r);
  Rng a(5), b(5), c(6);
  const Tensor d1 = generate_dream_class(w.gen, res.prompt, w.buffer, 50, a);
  const Tensor d2 = generate_dream_class(w.gen, res.prompt, w.buffer, 50, b);
  EXPECT_EQ(d1, d2);
  const Tensor d3 = generate_dream_class(w.gen, res.prompt, w.buffer, 50, c);
  auto mean_prob = [&](const Tensor& x) {
    const Tensor p = softmax_rows(w.net.infer(x).logits);
    double s = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) s += p.at(i, *w.table.head_of_real(cls)) / static_cast<double>(p.rows());
    return s;
  };
  EXPECT_NEAR(mean_prob(d3), mean_prob(d1), 0.1);
}

TEST(DreamDump, WritesPgmAndManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "d2l_dream_dump_test";
  std::filesystem::remove_all(dir);
  DreamEntry e;
  e.id = 7;
  e.prompt = Prompt("ring-4", 16, 16);
  Tensor img = Tensor::matrix(3, 144, 0.5);
  img.at(0, 0) = 1.0;
  dump_dream(dir, e, img, 12);
  std::ifstream pgm(dir / "dream_7" / "sample_000.pgm");
  std::string magic;
  int wdt = 0, hgt = 0, maxv = 0, first = 0;
  pgm >> magic >> wdt >> hgt >> maxv >> first;
  EXPECT_EQ(magic, "P2");
  EXPECT_EQ(wdt, 12);
  EXPECT_EQ(hgt, 12);
  EXPECT_EQ(maxv, 255);
  EXPECT_EQ(first, 255);
  EXPECT_TRUE(std::filesystem::exists(dir / "dream_7" / "sample_002.pgm"));
  EXPECT_TRUE(std::filesystem::exists(dir / "dream_7" / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "dream_7" / "prompt.csv"));
  std::filesystem::remove_all(dir);
}
