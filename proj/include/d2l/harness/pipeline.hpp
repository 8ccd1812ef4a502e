#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "d2l/harness/assets.hpp"
#include "d2l/harness/config.hpp"

namespace d2l {

/// An inline brute-force check that disagreed with the production path.
struct CheckFailure : Error {
  using Error::Error;
};

struct DreamEvent {
  std::size_t task = 0;
  std::size_t dream_id = 0;
  std::size_t source_class = 0;
  std::size_t head = 0;
  std::optional<std::size_t> evicted;  // dream displaced by this one
  std::size_t iterations = 0;
  std::size_t stop_iteration = 0;
  bool stopped = false;               // by the stop rule rather than the cap
  double stop_target_prob = 0.0;      // mean target probability on the probe batch at the stop
  double sample_target_prob = 0.0;    // same, over the generated dream dataset
};

struct MappingEvent {
  std::size_t task = 0;
  std::size_t real_class = 0;
  std::size_t head = 0;
  std::optional<std::size_t> removed_dream;
};

struct RunRecord {
  std::string label;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::size_t tasks = 0;

  AccuracyMatrix accuracy;
  std::vector<double> random_baseline;  // index 1..T
  std::vector<std::size_t> test_counts;
  double faa = 0.0;
  double fwt = 0.0;

  std::vector<MappingEvent> mappings;
  std::vector<DreamEvent> dreams;
  std::vector<Replacement> replacements;          // real classes landing on dream heads
  std::map<std::size_t, Tensor> dream_samples;    // stop-time probe samples per dream id
  std::optional<LeakReport> leaks;
  std::vector<DreamEntry> created;                // every dream at creation, with its id

  bool task1_dreaming = false;
  std::size_t loop_dreaming_phases = 0;  // middle tasks that dreamed
  std::size_t assignment_checks = 0;     // real-class assignments verified by brute force
  std::size_t mapping_checks = 0;        // dream-head mappings verified by brute force

  std::uint64_t generator_hash_before = 0, generator_hash_after = 0;
  std::uint64_t oracle_hash_before = 0, oracle_hash_after = 0;
  std::uint64_t final_network_hash = 0;

  TrainLog log;
  double wall_seconds = 0.0;

  ResultRow result_row() const;
};

/// Accuracy averaged over `inits` freshly seeded networks.
double random_baseline(const NetworkShape& shape, const SampleSet& test, const HeadTable& table,
                       std::span<const std::size_t> heads, std::size_t inits, std::uint64_t seed);

/// Oracle-training mode: every prompt optimization runs to the cap and its
/// trajectory is kept, while the dream itself uses the prompt at the first
/// record whose target probability is inside the labeling band (the last
/// record if none is).
struct TrajectoryCollector {
  LabelConfig label;
  std::vector<DreamTrajectory> trajectories;
};

/// One seed of the full pipeline. `joint` (heads = benchmark class ids) enables leak counting.
RunRecord run_pipeline(const RunConfig& cfg, const TaskStream& stream, const Assets& assets, std::uint64_t seed,
                       const Network* joint = nullptr, TrajectoryCollector* collect = nullptr);

/// Trajectories for the oracle: the dreaming pipeline (d2l-replace, no oracle)
/// run over `stream` in collector mode, so the classifier the prompts are
/// optimized against has seen dream classes exactly as in a real run.
std::vector<DreamTrajectory> collect_trajectories(const TaskStream& stream, const FrozenGenerator& g,
                                                  const RunConfig& cfg, std::uint64_t seed);
std::vector<DreamTrajectory> collect_bank(const std::vector<TaskStream>& bank, const FrozenGenerator& g,
                                          const RunConfig& cfg);

/// Writes config snapshot, metrics, matrices, logs and events under `dir`.
void write_run_dir(const std::filesystem::path& dir, const RunConfig& cfg, const RunRecord& r);

/// One run per seed (across `jobs` worker threads), each in <out>/<label>_b<buffer>/seed_<s>.
std::vector<RunRecord> run_seeds(const RunConfig& cfg, const TaskStream& stream, const Assets& assets,
                                 const Network* joint, std::size_t jobs, bool write);

}  // namespace d2l
