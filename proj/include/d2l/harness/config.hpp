#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "d2l/clmethods/training.hpp"
#include "d2l/dreaming/dreaming.hpp"
#include "d2l/generator/generator.hpp"
#include "d2l/metrics/metrics.hpp"
#include "d2l/oracle/oracle.hpp"
#include "d2l/synthstream/benchmark.hpp"

namespace d2l {

/// Invalid or unreadable configuration (exit status 2).
struct ConfigError : Error {
  using Error::Error;
};

/// Missing generator or oracle checkpoint (exit status 3).
struct MissingCheckpoint : Error {
  using Error::Error;
};

/// Where the frozen assets come from and how they are built.
struct AssetConfig {
  std::filesystem::path generator = "assets/generator.bin";
  std::filesystem::path oracle = "assets/oracle.bin";

  std::size_t generator_bank_classes = 77;  // the remaining free cells go to the oracle banks
  std::size_t generator_bank_samples = 40;
  std::uint64_t generator_bank_seed = 11;
  PretrainConfig pretrain{.seed = 3};

  // Oracle banks: free lattice cells cut into 16-class streams, first half
  // is bank A, second half bank B.
  std::size_t oracle_bank_samples = 40;
  std::uint64_t oracle_bank_seed = 12;
  std::size_t oracle_streams_per_bank = 1;
  std::uint64_t oracle_run_seed = 100;
  std::size_t oracle_seeds_per_stream = 8;
  double validation_fraction = 0.25;
  LabelConfig label;
  OracleTrainConfig oracle_train;
};

struct RunConfig {
  BenchmarkSpec benchmark;
  MethodConfig method;
  AssignmentRule assignment = AssignmentRule::greedy;
  DreamConfig dream;
  AssetConfig assets;
  JointConfig joint;
  std::size_t random_inits = 3;  // fresh networks averaged for the FWT baseline
  bool inline_checks = true;     // brute-force every real assignment and dream-head mapping
  bool dump_dreams = false;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::filesystem::path output_dir = "runs";

  /// Throws ConfigError.
  void validate() const;
  /// e.g. "er", "er-ace+d2l", "er+incremental"
  std::string label() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);
/// FNV-1a of the canonical JSON dump.
std::uint64_t config_hash(const RunConfig& c);

}  // namespace d2l
