#pragma once

#include <filesystem>
#include <vector>

#include "d2l/harness/pipeline.hpp"

namespace d2l {

/// {er, er-ace} x {without, with dreams} x {200, 500} on top of `base`.
std::vector<RunConfig> desk_sweep(const RunConfig& base);

/// All-class classifier for the leak test, seeded from the benchmark seed.
Network make_joint_classifier(const TaskStream& stream, const RunConfig& cfg);

/// <dir>/results.csv, aggregate.csv and summary.txt.
void write_aggregate(const std::filesystem::path& dir, const std::vector<ResultRow>& rows);

/// Every <dir>/**/seed_*/results.csv, in path order.
std::vector<ResultRow> collect_results(const std::filesystem::path& dir);

/// Final-column accuracy per task, averaged over seeds, one series per run group.
std::vector<Series> collect_final_accuracy(const std::filesystem::path& dir);

}  // namespace d2l
