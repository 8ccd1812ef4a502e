#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "d2l/harness/report.hpp"

using namespace d2l;

namespace {

struct World {
  RunConfig cfg;
  TaskStream stream;
  FrozenGenerator gen;
  World() {
    cfg.seeds = {0};
    stream = make_benchmark(cfg.benchmark);
    gen = pretrain_generator(generator_bank(stream, cfg.assets), cfg.assets.pretrain);
  }
};

const World& world() {
  static const World w;
  return w;
}

// fixed-optimization stopping needs no oracle
RunConfig dreaming_config(DreamStrategy s) {
  RunConfig c = world().cfg;
  c.method.use_dreams = true;
  c.method.strategy = s;
  c.dream.stop.kind = StopRuleKind::fixed_optimization;
  c.dream.max_iterations = 60;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("d2l_harness_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, DefaultsValidateAndRoundTrip) {
  RunConfig c;
  c.validate();
  EXPECT_EQ(c.label(), "er");
  c.method.method = Method::er_ace;
  c.method.use_dreams = true;
  c.method.strategy = DreamStrategy::d2l_replace;
  c.method.buffer_capacity = 500;
  c.dream.stop.kind = StopRuleKind::consecutive;
  c.seeds = {7, 9};
  const RunConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(back.label(), "er-ace+d2l");
  c.method.buffer_capacity = 200;
  EXPECT_NE(config_hash(back), config_hash(c));
}

TEST(Config, UnknownKeysAndBadValuesAreConfigErrors) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"method": {"bufer": 200}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"colour": 1})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"method": {"name": "gem"}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"method": {"buffer": "big"}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"oracle": {"band_lo": 0.7, "band_hi": 0.6}})")),
               ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"seeds": []})")), ConfigError);
  const RunConfig ok = config_from_json(nlohmann::json::parse(R"({"method": {"buffer": 500}, "seeds": [3]})"));
  EXPECT_EQ(ok.method.buffer_capacity, 500u);
  EXPECT_EQ(ok.seeds, std::vector<std::uint64_t>{3});
}

TEST(Config, MissingFileAndMalformedJson) {
  EXPECT_THROW(load_config("/nonexistent/run.json"), ConfigError);
  const auto p = scratch("bad.json");
  std::ofstream(p) << "{ not json";
  EXPECT_THROW(load_config(p), ConfigError);
}

TEST(Assets, MissingCheckpointsAreReported) {
  RunConfig c = dreaming_config(DreamStrategy::d2l_replace);
  c.assets.generator = "/nonexistent/generator.bin";
  EXPECT_THROW(load_assets(c), MissingCheckpoint);
  c.dream.stop.kind = StopRuleKind::n_of_k;
  c.assets.generator = scratch("gen.bin");
  save_generator(world().gen, c.assets.pretrain, {}, c.assets.generator);
  c.assets.oracle = "/nonexistent/oracle.bin";
  EXPECT_THROW(load_assets(c), MissingCheckpoint);
  // an oracle rule without an oracle is refused by the pipeline too
  EXPECT_THROW(run_pipeline(c, world().stream, Assets{world().gen, std::nullopt}, 0), MissingCheckpoint);
}

TEST(Assets, OracleBanksAreDisjointFromBenchmarkAndGenerator) {
  const auto& w = world();
  const OracleBanks banks = make_oracle_banks(w.stream, w.cfg);
  ASSERT_EQ(banks.a.size(), w.cfg.assets.oracle_streams_per_bank);
  ASSERT_EQ(banks.b.size(), banks.a.size());
  std::set<std::size_t> taken;
  for (const auto& c : w.stream.classes) taken.insert(c.cell_key());
  for (const auto& c : generator_bank(w.stream, w.cfg.assets).classes) EXPECT_TRUE(taken.insert(c.cell_key()).second);
  for (const auto* bank : {&banks.a, &banks.b})
    for (const auto& s : *bank)
      for (const auto& c : s.classes) EXPECT_TRUE(taken.insert(c.cell_key()).second) << c.name();
}

TEST(Pipeline, NoDreamsIsDeterministicAndFillsTheMatrix) {
  const auto& w = world();
  const Assets assets{w.gen, std::nullopt};
  const RunRecord a = run_pipeline(w.cfg, w.stream, assets, 0);
  const RunRecord b = run_pipeline(w.cfg, w.stream, assets, 0);
  EXPECT_EQ(a.final_network_hash, b.final_network_hash);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.log.steps, b.log.steps);
  const std::size_t T = w.stream.tasks.size();
  for (std::size_t i = 1; i <= T; ++i)
    for (std::size_t j = 0; j <= T; ++j) EXPECT_EQ(a.accuracy.has(i, j), j == 0 || j >= i - 1) << i << "," << j;
  EXPECT_GT(a.faa, 1.0 / 16);
  EXPECT_FALSE(a.task1_dreaming);
  EXPECT_EQ(a.loop_dreaming_phases, 0u);
  EXPECT_TRUE(a.dreams.empty());
  const RunRecord c = run_pipeline(w.cfg, w.stream, assets, 1);
  EXPECT_NE(a.final_network_hash, c.final_network_hash);
}

// Strategy "none" against a hand-written ER loop on the same RNG splits.
TEST(Pipeline, StrategyNoneMatchesPlainRehearsalLoop) {
  const auto& w = world();
  for (Method m : {Method::er, Method::er_ace}) {
    RunConfig c = w.cfg;
    c.method.method = m;
    const RunRecord r = run_pipeline(c, w.stream, Assets{w.gen, std::nullopt}, 3);

    Rng master(3);
    Rng init = master.split(1), data = master.split(2), dream = master.split(3);
    Network net(NetworkShape{}, init);
    HeadTable table(16);
    ReplayBuffer buffer(c.method.buffer_capacity);
    TrainLog log;
    for (std::size_t t = 0; t < w.stream.tasks.size(); ++t) {
      const Task& task = w.stream.tasks[t];
      for (std::size_t cls : task.classes) table.assign_real(table.free_heads().front(), cls);
      TrainContext ctx{net, buffer, table, task.classes, nullptr, data, dream, t + 1, &log};
      train_task(ctx, task.train, c.method, t == 0 ? Phase::bootstrap : Phase::continual);
    }
    ASSERT_EQ(r.log.steps.size(), log.steps.size());
    EXPECT_EQ(r.log.steps, log.steps);
    EXPECT_EQ(r.final_network_hash, net.hash());
  }
}

TEST(Pipeline, ReplaceDreamsInTaskOneAndEveryMiddleTask) {
  const auto& w = world();
  const RunConfig c = dreaming_config(DreamStrategy::d2l_replace);
  const RunRecord r = run_pipeline(c, w.stream, Assets{w.gen, std::nullopt}, 0);
  const std::size_t T = w.stream.tasks.size();
  EXPECT_TRUE(r.task1_dreaming);
  EXPECT_EQ(r.loop_dreaming_phases, T - 2);
  EXPECT_EQ(r.generator_hash_before, r.generator_hash_after);
  EXPECT_EQ(r.assignment_checks, T - 1);
  EXPECT_GT(r.mapping_checks, 0u);
  // one dream per class of every task except the last
  std::size_t expected = 0;
  for (std::size_t t = 0; t + 1 < T; ++t) expected += w.stream.tasks[t].classes.size();
  EXPECT_EQ(r.dreams.size(), expected);
  for (const auto& d : r.dreams) {
    EXPECT_LT(d.task, T);
    EXPECT_GE(d.sample_target_prob, 0.0);
    EXPECT_LE(d.sample_target_prob, 1.0);
  }
  // every replacement names a dream that existed
  std::set<std::size_t> ids;
  for (const auto& e : r.created) ids.insert(e.id);
  for (const auto& rep : r.replacements) EXPECT_TRUE(ids.count(rep.dream_id));

  const RunRecord again = run_pipeline(c, w.stream, Assets{w.gen, std::nullopt}, 0);
  EXPECT_EQ(again.final_network_hash, r.final_network_hash);
}

TEST(Pipeline, AtBeginningOnlyDreamsOnce) {
  const auto& w = world();
  const RunRecord r = run_pipeline(dreaming_config(DreamStrategy::at_beginning), w.stream, Assets{w.gen, std::nullopt}, 0);
  EXPECT_TRUE(r.task1_dreaming);
  EXPECT_EQ(r.loop_dreaming_phases, 0u);
  for (const auto& d : r.dreams) EXPECT_EQ(d.task, 1u);
}

TEST(Pipeline, IncrementalGrowsTheHeadBank) {
  const auto& w = world();
  const RunRecord r = run_pipeline(dreaming_config(DreamStrategy::incremental), w.stream, Assets{w.gen, std::nullopt}, 0);
  EXPECT_EQ(r.loop_dreaming_phases, w.stream.tasks.size() - 2);
  std::size_t evicted = 0;
  for (const auto& d : r.dreams)
    if (d.evicted) ++evicted;
  EXPECT_EQ(evicted, 0u);
}

TEST(Pipeline, CollectorKeepsFullTrajectoriesAndStopsInBand) {
  const auto& w = world();
  RunConfig c = dreaming_config(DreamStrategy::d2l_replace);
  c.dream.max_iterations = 80;
  TrajectoryCollector sink;
  const RunRecord r = run_pipeline(c, w.stream, Assets{w.gen, std::nullopt}, 0, nullptr, &sink);
  ASSERT_EQ(sink.trajectories.size(), r.dreams.size());
  for (std::size_t i = 0; i < r.dreams.size(); ++i) {
    EXPECT_EQ(sink.trajectories[i].records.size(), 80u);
    if (r.dreams[i].stopped) {
      EXPECT_GE(r.dreams[i].stop_target_prob, sink.label.band_lo);
      EXPECT_LE(r.dreams[i].stop_target_prob, sink.label.band_hi);
    }
  }
}

TEST(Output, RunDirectoryAndReport) {
  const auto& w = world();
  RunConfig c = dreaming_config(DreamStrategy::d2l_replace);
  c.seeds = {0, 1};
  c.output_dir = scratch("runs");
  const Network joint = make_joint_classifier(w.stream, c);
  const auto records = run_seeds(c, w.stream, Assets{w.gen, std::nullopt}, &joint, 2, true);
  ASSERT_EQ(records.size(), 2u);
  const auto dir = c.output_dir / (c.label() + "_b200") / "seed_1";
  for (const char* f : {"config.json", "record.json", "accuracy_matrix.csv", "results.csv", "epochs.csv",
                        "mappings.csv", "dreams.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  // the thread pool does not change results
  const RunRecord solo = run_pipeline(c, w.stream, Assets{w.gen, std::nullopt}, 1, &joint);
  EXPECT_EQ(solo.final_network_hash, records[1].final_network_hash);
  ASSERT_TRUE(records[1].leaks);
  EXPECT_GE(records[1].leaks->fraction, 0.0);
  EXPECT_LE(records[1].leaks->fraction, 1.0);

  const auto rows = collect_results(c.output_dir);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].method, "er+d2l");
  const auto series = collect_final_accuracy(c.output_dir);
  ASSERT_EQ(series.size(), 1u);
  EXPECT_EQ(series[0].values.size(), w.stream.tasks.size());
  EXPECT_THROW(collect_results("/nonexistent/dir"), ConfigError);
}

TEST(Sweep, EightConfigurations) {
  const auto runs = desk_sweep(RunConfig{});
  ASSERT_EQ(runs.size(), 8u);
  std::set<std::string> keys;
  for (const auto& r : runs) keys.insert(r.label() + "/" + std::to_string(r.method.buffer_capacity));
  EXPECT_EQ(keys.size(), 8u);
  EXPECT_TRUE(keys.count("er-ace+d2l/500"));
}
