#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "d2l/nncore/network.hpp"
#include "d2l/synthstream/benchmark.hpp"

namespace d2l {

/// A[i][j]: accuracy on task i's classes after training through task j.
/// Tasks are 1-based; column 0 is the untrained network. Unset entries are NaN.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t tasks);

  std::size_t tasks() const { return tasks_; }
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  bool has(std::size_t i, std::size_t j) const;

  /// task,after_0,...,after_T
  void write_csv(std::ostream& out) const;
  static AccuracyMatrix read_csv(std::istream& in);
  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&);

 private:
  std::size_t tasks_ = 0;
  std::vector<double> a_;
};

/// Class-count weighted mean of the last column; class_counts[i-1] is the
/// number of test samples of task i.
double faa(const AccuracyMatrix& a, std::span<const std::size_t> test_counts);
/// Mean over t = 2..T of A[t][t-1] - random[t]; random is indexed by task
/// (entry 0 unused).
double fwt(const AccuracyMatrix& a, std::span<const double> random_baseline);

/// A real class placed on a head that held a dream.
struct Replacement {
  std::size_t task = 0;
  std::size_t real_class = 0;
  std::size_t head = 0;
  std::size_t dream_id = 0;
};

struct LeakReport {
  std::size_t leaks = 0;
  std::size_t replacements = 0;
  double fraction = 0.0;
};

struct JointConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.03;
};

/// Offline classifier over every stream class (heads = class ids), used only
/// by the leak test.
Network train_joint_classifier(const SampleSet& train, std::size_t num_classes, const JointConfig& cfg, Rng& rng);

/// Majority (ties to the lowest class) of the joint classifier's argmax over `samples`.
std::size_t majority_class(const Network& joint, const Tensor& samples);
/// A replacement leaks when the joint classifier's majority vote on the
/// evicted dream's stop-time samples is the incoming real class. The joint
/// classifier's heads are class ids.
LeakReport count_leaks(std::span<const Replacement> replacements, const std::map<std::size_t, Tensor>& dream_samples,
                       const Network& joint);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1); 0 for n < 2
  std::size_t n = 0;
};

Summary summarize(std::span<const double> v);
/// "mean ± std" with fixed decimals.
std::string format_summary(const Summary& s, int decimals = 4);

struct ResultRow {
  std::string method;
  std::size_t buffer = 0;
  std::uint64_t seed = 0;
  double faa = 0.0;
  double fwt = 0.0;
  std::size_t leaks = 0;
  double leak_fraction = 0.0;
};

inline constexpr const char* kResultsHeader = "method,buffer,seed,faa,fwt,leaks,leak_fraction";
void write_results_csv(std::ostream& out, std::span<const ResultRow> rows, bool header = true);
/// Throws Error on a malformed header or row.
std::vector<ResultRow> read_results_csv(std::istream& in);

struct AggregateRow {
  std::string method;
  std::size_t buffer = 0;
  Summary faa;
  Summary fwt;
  Summary leak_fraction;
};

/// Groups by (method, buffer) in first-seen order.
std::vector<AggregateRow> aggregate(std::span<const ResultRow> rows);
void write_aggregate_csv(std::ostream& out, std::span<const AggregateRow> rows);
/// Plain-text table: mean ± standard deviation over n runs.
void write_aggregate_text(std::ostream& out, std::span<const AggregateRow> rows);

struct Series {
  std::string name;
  std::vector<double> values;  // one per task
};

/// Standalone SVG line plot of per-task accuracy.
void write_accuracy_svg(const std::filesystem::path& path, std::span<const Series> series, const std::string& title);

}  // namespace d2l
