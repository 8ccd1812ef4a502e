#include "d2l/harness/assets.hpp"

#include <cmath>
#include <fstream>

#include "d2l/nncore/checkpoint.hpp"

namespace d2l {

using nlohmann::json;

TaskStream generator_bank(const TaskStream& benchmark, const AssetConfig& a) {
  return make_disjoint_bank(a.generator_bank_classes, a.generator_bank_samples, benchmark.grid, a.generator_bank_seed,
                            benchmark.classes);
}

OracleBanks make_oracle_banks(const TaskStream& benchmark, const RunConfig& cfg) {
  // The oracle's classes are new to the generator, as the benchmark's are.
  std::vector<ClassSpec> taken = benchmark.classes;
  for (const ClassSpec& c : generator_bank(benchmark, cfg.assets).classes) taken.push_back(c);
  const std::size_t per_stream = 16;
  const TaskStream all = make_disjoint_bank(free_cells(taken), cfg.assets.oracle_bank_samples, benchmark.grid,
                                            cfg.assets.oracle_bank_seed, taken);
  auto streams = split_bank(all, per_stream, 4);
  const std::size_t k = cfg.assets.oracle_streams_per_bank;
  if (streams.size() < 2 * k)
    throw ConfigError("oracle banks: " + std::to_string(streams.size()) + " streams available, " +
                      std::to_string(2 * k) + " requested");
  OracleBanks out;
  for (std::size_t i = 0; i < k; ++i) out.a.push_back(streams[i]);
  for (std::size_t i = k; i < 2 * k; ++i) out.b.push_back(streams[i]);
  return out;
}

OracleBuild build_oracle(const std::vector<DreamTrajectory>& trajectories, const RunConfig& cfg) {
  OracleBuild b;
  b.trajectories = trajectories.size();
  b.dataset = label_trajectories(trajectories, cfg.assets.label, cfg.assets.validation_fraction,
                                 cfg.assets.oracle_train.seed);
  b.oracle = train_oracle(b.dataset.train, b.dataset.validation, cfg.assets.oracle_train, &b.report);
  return b;
}

GeneralizationReport compare_oracles(const std::vector<DreamTrajectory>& trajectories, const OracleNet& a,
                                     const OracleNet& b, const StopRule& rule) {
  GeneralizationReport r;
  double sum = 0.0;
  for (const auto& t : trajectories) {
    const std::size_t cap = t.records.empty() ? 0 : t.records.size() - 1;
    const std::size_t sa = replay_stop(t, a, rule).value_or(cap);
    const std::size_t sb = replay_stop(t, b, rule).value_or(cap);
    r.stops_a.push_back(sa);
    r.stops_b.push_back(sb);
    sum += std::abs(static_cast<double>(sa) - static_cast<double>(sb));
  }
  r.trajectories = trajectories.size();
  r.mean_abs_deviation = trajectories.empty() ? 0.0 : sum / static_cast<double>(trajectories.size());
  return r;
}

void save_oracle(const OracleNet& o, const OracleBuild* build, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_tensors(path, o.export_tensors());
  json m;
  m["kind"] = "oracle";
  m["param_hash"] = o.hash();
  m["window"] = kWindowLength;
  if (build) {
    m["trajectories"] = build->trajectories;
    m["discarded"] = build->dataset.discarded;
    m["train_windows"] = build->dataset.train.size();
    m["validation_windows"] = build->dataset.validation.size();
    m["diversity_floor"] = build->dataset.diversity_floor;
    m["epochs_run"] = build->report.epochs_run;
    m["best_epoch"] = build->report.best_epoch;
    m["val_accuracy"] = build->report.val_accuracy;
    m["train_accuracy"] = build->report.train_accuracy;
  }
  std::ofstream(path.string() + ".json") << m.dump(2) << '\n';
}

OracleNet load_oracle(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingCheckpoint("oracle checkpoint not found: " + path.string());
  return OracleNet::from_tensors(load_tensors(path));
}

bool needs_generator(const RunConfig& cfg) {
  return cfg.method.use_dreams && cfg.method.strategy != DreamStrategy::none;
}

bool needs_oracle(const RunConfig& cfg) {
  return needs_generator(cfg) && cfg.dream.stop.kind != StopRuleKind::never &&
         cfg.dream.stop.kind != StopRuleKind::fixed_optimization;
}

Assets load_assets(const RunConfig& cfg) {
  Assets a;
  if (needs_generator(cfg)) {
    if (!std::filesystem::exists(cfg.assets.generator))
      throw MissingCheckpoint("generator checkpoint not found: " + cfg.assets.generator.string());
    a.generator = load_generator(cfg.assets.generator);
  }
  if (needs_oracle(cfg)) a.oracle = load_oracle(cfg.assets.oracle);
  return a;
}

}  // namespace d2l
