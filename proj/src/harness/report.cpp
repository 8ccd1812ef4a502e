#include "d2l/harness/report.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace d2l {

std::vector<RunConfig> desk_sweep(const RunConfig& base) {
  std::vector<RunConfig> out;
  for (std::size_t buffer : {200u, 500u})
    for (Method m : {Method::er, Method::er_ace})
      for (bool dreams : {false, true}) {
        RunConfig c = base;
        c.method.method = m;
        c.method.buffer_capacity = buffer;
        c.method.use_dreams = dreams;
        c.method.strategy = dreams ? DreamStrategy::d2l_replace : DreamStrategy::none;
        c.validate();
        out.push_back(std::move(c));
      }
  return out;
}

Network make_joint_classifier(const TaskStream& stream, const RunConfig& cfg) {
  Rng rng(splitmix64(cfg.benchmark.seed ^ 0x6a6f696e74ULL));
  return train_joint_classifier(stream.all_train(), stream.num_classes(), cfg.joint, rng);
}

void write_aggregate(const std::filesystem::path& dir, const std::vector<ResultRow>& rows) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "results.csv");
    write_results_csv(f, rows);
  }
  const auto agg = aggregate(rows);
  {
    std::ofstream f(dir / "aggregate.csv");
    write_aggregate_csv(f, agg);
  }
  std::ofstream f(dir / "summary.txt");
  write_aggregate_text(f, agg);
}

namespace {

std::vector<std::filesystem::path> seed_files(const std::filesystem::path& dir, const char* name) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() != name) continue;
    if (e.path().parent_path().filename().string().rfind("seed_", 0) != 0) continue;
    out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<ResultRow> collect_results(const std::filesystem::path& dir) {
  std::vector<ResultRow> rows;
  for (const auto& p : seed_files(dir, "results.csv")) {
    std::ifstream f(p);
    for (auto& r : read_results_csv(f)) rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<Series> collect_final_accuracy(const std::filesystem::path& dir) {
  std::map<std::string, std::vector<AccuracyMatrix>> groups;
  std::vector<std::string> order;
  for (const auto& p : seed_files(dir, "accuracy_matrix.csv")) {
    const std::string g = p.parent_path().parent_path().filename().string();
    std::ifstream f(p);
    if (!groups.count(g)) order.push_back(g);
    groups[g].push_back(AccuracyMatrix::read_csv(f));
  }
  std::vector<Series> out;
  for (const auto& g : order) {
    const auto& ms = groups[g];
    const std::size_t T = ms.front().tasks();
    Series s{g, std::vector<double>(T, 0.0)};
    for (const auto& m : ms) {
      if (m.tasks() != T) throw Error("report: mixed task counts in " + g);
      for (std::size_t i = 1; i <= T; ++i) s.values[i - 1] += m.at(i, T) / static_cast<double>(ms.size());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace d2l
