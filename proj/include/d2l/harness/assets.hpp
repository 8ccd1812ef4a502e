#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "d2l/harness/config.hpp"

namespace d2l {

/// The generator's pretraining bank: every lattice cell not used by the benchmark.
TaskStream generator_bank(const TaskStream& benchmark, const AssetConfig& a);

struct OracleBanks {
  std::vector<TaskStream> a;
  std::vector<TaskStream> b;
};

/// Two disjoint sets of 16-class streams over cells unused by the benchmark.
OracleBanks make_oracle_banks(const TaskStream& benchmark, const RunConfig& cfg);

struct OracleBuild {
  OracleNet oracle;
  LabeledDataset dataset;
  OracleTrainReport report;
  std::size_t trajectories = 0;
};

/// Labels `trajectories` and trains a frozen oracle on them.
OracleBuild build_oracle(const std::vector<DreamTrajectory>& trajectories, const RunConfig& cfg);

struct GeneralizationReport {
  std::vector<std::size_t> stops_a;  // replayed stop iteration (cap if never)
  std::vector<std::size_t> stops_b;
  double mean_abs_deviation = 0.0;
  std::size_t trajectories = 0;
};

/// Stop iterations of two oracles replayed on the same trajectories.
GeneralizationReport compare_oracles(const std::vector<DreamTrajectory>& trajectories, const OracleNet& a,
                                     const OracleNet& b, const StopRule& rule);

void save_oracle(const OracleNet& o, const OracleBuild* build, const std::filesystem::path& path);
OracleNet load_oracle(const std::filesystem::path& path);

/// Loads the generator (and oracle, when the config needs one); throws
/// MissingCheckpoint when a required file is absent.
struct Assets {
  FrozenGenerator generator;
  std::optional<OracleNet> oracle;
};
bool needs_generator(const RunConfig& cfg);
bool needs_oracle(const RunConfig& cfg);
Assets load_assets(const RunConfig& cfg);

}  // namespace d2l
