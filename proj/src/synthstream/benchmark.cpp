#include "d2l/synthstream/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "d2l/nncore/checkpoint.hpp"

namespace d2l {

namespace {

struct Range {
  double lo, hi;
  double at(std::size_t k) const { return lo + (hi - lo) * static_cast<double>(k) / (kLatticeSide - 1); }
  double jitter() const { return 0.05 * (hi - lo); }
};

// Parameter ranges per family (a, b). Lattice spacing is a quarter of the
// range, well above the 10% total jitter width.
std::pair<Range, Range> ranges(Family f) {
  constexpr double pi = std::numbers::pi;
  switch (f) {
    case Family::blob:
      return {{0.2, 0.8}, {0.2, 0.8}};
    case Family::stripe:
      return {{1.0, 3.0}, {0.0, 0.8 * pi}};
    case Family::ring:
      return {{0.35, 0.65}, {0.12, 0.4}};
    case Family::checker:
      return {{1.0, 2.6}, {0.0, 0.4 * pi}};
    case Family::cross:
      return {{0.25, 0.75}, {0.25, 0.75}};
  }
  throw PreconditionError("unknown family");
}

double pattern(Family f, double a, double b, double u, double v) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  switch (f) {
    case Family::blob: {
      const double d2 = (u - a) * (u - a) + (v - b) * (v - b);
      return std::exp(-d2 / (2.0 * 0.12 * 0.12));
    }
    case Family::stripe: {
      const double s = u * std::cos(b) + v * std::sin(b);
      return 0.5 + 0.5 * std::cos(two_pi * a * s);
    }
    case Family::ring: {
      const double d = std::sqrt((u - a) * (u - a) + (v - 0.5) * (v - 0.5));
      return std::exp(-(d - b) * (d - b) / (2.0 * 0.05 * 0.05));
    }
    case Family::checker: {
      const double s = u * std::cos(b) + v * std::sin(b);
      const double t = -u * std::sin(b) + v * std::cos(b);
      return 0.5 + 0.5 * std::tanh(3.0 * std::sin(two_pi * a * s) * std::sin(two_pi * a * t));
    }
    case Family::cross: {
      const double w = 2.0 * 0.07 * 0.07;
      return std::max(std::exp(-(u - a) * (u - a) / w), std::exp(-(v - b) * (v - b) / w));
    }
  }
  return 0.0;
}

// Builds a stream whose classes are the given cells, split into tasks of the
// given sizes in order.
TaskStream build_stream(const std::vector<std::size_t>& cells, const std::vector<std::size_t>& sizes,
                        std::size_t samples_per_class, std::size_t grid, std::uint64_t seed, double noise_sigma,
                        double train_fraction, Rng& rng) {
  TaskStream s;
  s.grid = grid;
  s.seed = seed;
  for (std::size_t i = 0; i < cells.size(); ++i) s.classes.push_back(class_for_cell(cells[i], i));

  const std::size_t dim = grid * grid;
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(samples_per_class)));
  if (n_train == 0 || n_train >= samples_per_class) throw PreconditionError("train/test split leaves an empty side");
  const std::size_t n_test = samples_per_class - n_train;

  std::size_t next = 0;
  for (std::size_t size : sizes) {
    Task task;
    task.train.images = Tensor::matrix(size * n_train, dim);
    task.test.images = Tensor::matrix(size * n_test, dim);
    for (std::size_t k = 0; k < size; ++k, ++next) {
      const ClassSpec& spec = s.classes[next];
      task.classes.push_back(spec.id);
      for (std::size_t i = 0; i < samples_per_class; ++i) {
        if (i < n_train) {
          render_sample(spec, grid, noise_sigma, rng, task.train.images.row(task.train.labels.size()));
          task.train.labels.push_back(spec.id);
        } else {
          render_sample(spec, grid, noise_sigma, rng, task.test.images.row(task.test.labels.size()));
          task.test.labels.push_back(spec.id);
        }
      }
    }
    s.tasks.push_back(std::move(task));
  }
  return s;
}

}  // namespace

const char* family_name(Family f) {
  switch (f) {
    case Family::blob:
      return "blob";
    case Family::stripe:
      return "stripe";
    case Family::ring:
      return "ring";
    case Family::checker:
      return "checker";
    case Family::cross:
      return "cross";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  for (std::size_t f = 0; f < kFamilyCount; ++f) {
    if (name == family_name(static_cast<Family>(f))) return static_cast<Family>(f);
  }
  throw PreconditionError("unknown pattern family '" + name + "'");
}

std::string ClassSpec::name() const { return std::string(family_name(family)) + "-" + std::to_string(cell); }

ClassSpec class_for_cell(std::size_t cell_key, std::size_t id) {
  if (cell_key >= kUniverseSize) throw PreconditionError("cell key out of range");
  ClassSpec c;
  c.id = id;
  c.family = static_cast<Family>(cell_key / kCellsPerFamily);
  c.cell = cell_key % kCellsPerFamily;
  const auto [ra, rb] = ranges(c.family);
  c.a = ra.at(c.cell / kLatticeSide);
  c.b = rb.at(c.cell % kLatticeSide);
  c.jitter_a = ra.jitter();
  c.jitter_b = rb.jitter();
  return c;
}

SampleSet SampleSet::subset(std::span<const std::size_t> rows) const {
  SampleSet out;
  out.images = images.gather_rows(rows);
  for (std::size_t r : rows) out.labels.push_back(labels[r]);
  return out;
}

void SampleSet::append(const SampleSet& other) {
  images.append_rows(other.images);
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

SampleSet TaskStream::all_test() const {
  SampleSet out;
  for (const Task& t : tasks) out.append(t.test);
  return out;
}

SampleSet TaskStream::all_train() const {
  SampleSet out;
  for (const Task& t : tasks) out.append(t.train);
  return out;
}

std::vector<std::size_t> task_sizes(std::size_t num_classes, std::size_t post_tasks) {
  if (num_classes < 4 || num_classes % 2 != 0) throw PreconditionError("num_classes must be even and >= 4");
  const std::size_t first = (num_classes + 1) / 2;
  const std::size_t rest = num_classes - first;
  if (post_tasks == 0 || rest % post_tasks != 0) {
    throw PreconditionError(std::to_string(rest) + " remaining classes are not divisible into " +
                            std::to_string(post_tasks) + " tasks");
  }
  std::vector<std::size_t> sizes{first};
  sizes.insert(sizes.end(), post_tasks, rest / post_tasks);
  return sizes;
}

TaskStream make_benchmark(const BenchmarkSpec& spec) {
  const auto sizes = task_sizes(spec.num_classes, spec.post_tasks);
  if (spec.samples_per_class < 20) throw PreconditionError("samples_per_class must be >= 20");
  if (spec.num_classes > kUniverseSize) throw PreconditionError("not enough parameter cells for the benchmark");
  Rng rng(spec.seed);
  std::vector<std::size_t> cells(kUniverseSize);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  for (std::size_t i = cells.size() - 1; i > 0; --i) std::swap(cells[i], cells[rng.below(i + 1)]);
  cells.resize(spec.num_classes);
  return build_stream(cells, sizes, spec.samples_per_class, spec.grid, spec.seed, spec.noise_sigma,
                      spec.train_fraction, rng);
}

std::size_t free_cells(std::span<const ClassSpec> exclude) {
  std::set<std::size_t> used;
  for (const ClassSpec& c : exclude) used.insert(c.cell_key());
  return kUniverseSize - used.size();
}

TaskStream make_disjoint_bank(std::size_t num_classes, std::size_t samples_per_class, std::size_t grid,
                              std::uint64_t seed, std::span<const ClassSpec> exclude, double noise_sigma) {
  if (num_classes == 0) throw PreconditionError("bank must hold at least one class");
  std::set<std::size_t> used;
  for (const ClassSpec& c : exclude) used.insert(c.cell_key());
  std::vector<std::size_t> cells;
  for (std::size_t k = 0; k < kUniverseSize; ++k)
    if (!used.count(k)) cells.push_back(k);
  if (cells.size() < num_classes) {
    throw PreconditionError("parameter space exhausted: " + std::to_string(cells.size()) + " free cells, " +
                            std::to_string(num_classes) + " requested");
  }
  Rng rng(seed);
  for (std::size_t i = cells.size() - 1; i > 0; --i) std::swap(cells[i], cells[rng.below(i + 1)]);
  cells.resize(num_classes);
  return build_stream(cells, {num_classes}, samples_per_class, grid, seed, noise_sigma, 0.8, rng);
}

std::vector<TaskStream> split_bank(const TaskStream& bank, std::size_t classes_per_stream, std::size_t post_tasks) {
  if (bank.tasks.size() != 1) throw PreconditionError("split_bank: bank must be a single task");
  const std::vector<std::size_t> sizes = task_sizes(classes_per_stream, post_tasks);
  const Task& all = bank.tasks.front();
  auto pick = [](const SampleSet& src, std::size_t global, std::size_t local) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < src.size(); ++i)
      if (src.labels[i] == global) rows.push_back(i);
    SampleSet out = src.subset(rows);
    std::fill(out.labels.begin(), out.labels.end(), local);
    return out;
  };
  std::vector<TaskStream> out;
  for (std::size_t s = 0; (s + 1) * classes_per_stream <= bank.classes.size(); ++s) {
    TaskStream ts;
    ts.grid = bank.grid;
    ts.seed = bank.seed;
    std::size_t local = 0;
    for (std::size_t size : sizes) {
      Task task;
      for (std::size_t k = 0; k < size; ++k, ++local) {
        const std::size_t global = all.classes[s * classes_per_stream + local];
        ClassSpec spec = bank.classes[global];
        spec.id = local;
        ts.classes.push_back(spec);
        task.classes.push_back(local);
        task.train.append(pick(all.train, global, local));
        task.test.append(pick(all.test, global, local));
      }
      ts.tasks.push_back(std::move(task));
    }
    out.push_back(std::move(ts));
  }
  return out;
}

void render_sample(const ClassSpec& spec, std::size_t grid, double noise_sigma, Rng& rng, std::span<double> out) {
  if (out.size() != grid * grid) throw ShapeError("render_sample: output size mismatch");
  const double a = spec.a + rng.uniform(-spec.jitter_a, spec.jitter_a);
  const double b = spec.b + rng.uniform(-spec.jitter_b, spec.jitter_b);
  const double g = static_cast<double>(grid);
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      const double u = (static_cast<double>(j) + 0.5) / g;
      const double v = (static_cast<double>(i) + 0.5) / g;
      const double px = pattern(spec.family, a, b, u, v) + noise_sigma * rng.normal();
      out[i * grid + j] = std::clamp(px, 0.0, 1.0);
    }
  }
}

SampleSet sample_batch(const SampleSet& set, std::size_t batch_size, Rng& rng) {
  if (set.empty()) throw PreconditionError("sample_batch: empty set");
  if (batch_size == 0) throw PreconditionError("sample_batch: batch size must be positive");
  std::vector<std::size_t> rows(batch_size);
  for (auto& r : rows) r = rng.below(set.size());
  return set.subset(rows);
}

namespace {

Tensor labels_tensor(const std::vector<std::size_t>& labels) {
  Tensor t = Tensor::matrix(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = static_cast<double>(labels[i]);
  return t;
}

std::vector<std::size_t> labels_from(const Tensor& t) {
  std::vector<std::size_t> out;
  for (double v : t.values()) out.push_back(static_cast<std::size_t>(v));
  return out;
}

}  // namespace

void export_stream(const TaskStream& stream, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "manifest.csv");
  if (!csv) throw Error("cannot write " + (dir / "manifest.csv").string());
  csv.precision(17);
  csv << "class_id,family,cell,param_a,param_b,task\n";
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    for (std::size_t id : stream.tasks[t].classes) {
      const ClassSpec& c = stream.classes[id];
      csv << c.id << ',' << family_name(c.family) << ',' << c.cell << ',' << c.a << ',' << c.b << ',' << t << '\n';
    }
  }
  std::vector<Tensor> tensors;
  tensors.push_back(Tensor::row_vector({static_cast<double>(stream.grid), static_cast<double>(stream.seed)}));
  for (const Task& t : stream.tasks) {
    tensors.push_back(t.train.images);
    tensors.push_back(labels_tensor(t.train.labels));
    tensors.push_back(t.test.images);
    tensors.push_back(labels_tensor(t.test.labels));
  }
  save_tensors(dir / "samples.bin", tensors);
}

TaskStream import_stream(const std::filesystem::path& dir) {
  std::ifstream csv(dir / "manifest.csv");
  if (!csv) throw Error("cannot read " + (dir / "manifest.csv").string());
  const auto tensors = load_tensors(dir / "samples.bin");
  if (tensors.empty() || (tensors.size() - 1) % 4 != 0 || tensors[0].size() != 2) {
    throw CheckpointError("samples.bin has an unexpected layout");
  }
  TaskStream s;
  s.grid = static_cast<std::size_t>(tensors[0][0]);
  s.seed = static_cast<std::uint64_t>(tensors[0][1]);
  s.tasks.resize((tensors.size() - 1) / 4);

  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 6) throw Error("manifest.csv: malformed row '" + line + "'");
    const Family fam = parse_family(f[1]);
    ClassSpec c = class_for_cell(static_cast<std::size_t>(fam) * kCellsPerFamily + std::stoul(f[2]), std::stoul(f[0]));
    const std::size_t task = std::stoul(f[5]);
    if (task >= s.tasks.size()) throw Error("manifest.csv: task index out of range");
    if (s.classes.size() <= c.id) s.classes.resize(c.id + 1);
    s.classes[c.id] = c;
    s.tasks[task].classes.push_back(c.id);
  }
  for (std::size_t t = 0; t < s.tasks.size(); ++t) {
    s.tasks[t].train = {tensors[1 + 4 * t], labels_from(tensors[2 + 4 * t])};
    s.tasks[t].test = {tensors[3 + 4 * t], labels_from(tensors[4 + 4 * t])};
  }
  return s;
}

}  // namespace d2l
