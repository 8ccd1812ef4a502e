#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d2l/nncore/rng.hpp"
#include "d2l/nncore/tensor.hpp"

namespace d2l {

enum class Family { blob, stripe, ring, checker, cross };

inline constexpr std::size_t kFamilyCount = 5;
/// Each family has a lattice_side x lattice_side grid of parameter cells.
inline constexpr std::size_t kLatticeSide = 5;
inline constexpr std::size_t kCellsPerFamily = kLatticeSide * kLatticeSide;
inline constexpr std::size_t kUniverseSize = kFamilyCount * kCellsPerFamily;

const char* family_name(Family f);
Family parse_family(const std::string& name);

/// One synthetic class: a pattern family and two lattice-aligned parameters.
/// `a`/`b` mean different things per family:
///   blob    center x, center y
///   stripe  frequency, rotation
///   ring    center x, radius
///   checker frequency, rotation
///   cross   center x, center y
struct ClassSpec {
  std::size_t id = 0;
  Family family = Family::blob;
  std::size_t cell = 0;  // index into the family's lattice
  double a = 0.0;
  double b = 0.0;
  double jitter_a = 0.0;  // half-width of the uniform per-sample jitter
  double jitter_b = 0.0;

  /// Label string used for text embeddings, e.g. "ring-13".
  std::string name() const;

  /// Unique over the whole class universe.
  std::size_t cell_key() const { return static_cast<std::size_t>(family) * kCellsPerFamily + cell; }
};

/// ClassSpec for a universe cell, with the default +/-5%-of-range jitter.
ClassSpec class_for_cell(std::size_t cell_key, std::size_t id);

/// Labeled images, one per row of `images` ([n, grid*grid]).
struct SampleSet {
  Tensor images;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t dim() const { return images.cols(); }
  SampleSet subset(std::span<const std::size_t> rows) const;
  void append(const SampleSet& other);
};

struct Task {
  std::vector<std::size_t> classes;
  SampleSet train;
  SampleSet test;
};

struct TaskStream {
  std::size_t grid = 12;
  std::uint64_t seed = 0;
  std::vector<ClassSpec> classes;  // indexed by class id
  std::vector<Task> tasks;

  std::size_t num_classes() const { return classes.size(); }
  std::size_t input_dim() const { return grid * grid; }
  /// Union of all test splits.
  SampleSet all_test() const;
  SampleSet all_train() const;
};

struct BenchmarkSpec {
  std::size_t num_classes = 16;
  std::size_t post_tasks = 4;  // tasks after the first
  std::size_t samples_per_class = 100;
  std::size_t grid = 12;
  std::uint64_t seed = 0;
  double noise_sigma = 0.05;
  double train_fraction = 0.8;
};

/// Task sizes: ceil(n/2) classes first, the rest split equally.
std::vector<std::size_t> task_sizes(std::size_t num_classes, std::size_t post_tasks);

TaskStream make_benchmark(const BenchmarkSpec& spec);

/// A single-task stream over `num_classes` cells not used by any class in
/// `exclude`. Class ids are local to the bank (0..num_classes-1).
TaskStream make_disjoint_bank(std::size_t num_classes, std::size_t samples_per_class, std::size_t grid,
                              std::uint64_t seed, std::span<const ClassSpec> exclude, double noise_sigma = 0.05);

/// Cuts a single-task bank into consecutive streams of `classes_per_stream`
/// classes each, laid out like a benchmark (task_sizes). Class ids are local
/// to each stream; leftover classes are dropped.
std::vector<TaskStream> split_bank(const TaskStream& bank, std::size_t classes_per_stream, std::size_t post_tasks);

/// Number of universe cells not covered by `exclude`.
std::size_t free_cells(std::span<const ClassSpec> exclude);

/// Renders one sample of `spec` with jitter and pixel noise into `out`.
void render_sample(const ClassSpec& spec, std::size_t grid, double noise_sigma, Rng& rng, std::span<double> out);

/// Uniform with replacement.
SampleSet sample_batch(const SampleSet& set, std::size_t batch_size, Rng& rng);

// Export: <dir>/manifest.csv (class_id,family,cell,param_a,param_b,task) and
// <dir>/samples.bin, a tensor container holding, per task, the train images,
// train labels, test images and test labels (labels stored as doubles).
void export_stream(const TaskStream& stream, const std::filesystem::path& dir);
TaskStream import_stream(const std::filesystem::path& dir);

}  // namespace d2l
