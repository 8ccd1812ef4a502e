#include "d2l/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <numeric>
#include <sstream>

#include "d2l/nncore/optimizer.hpp"

namespace d2l {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fixed(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

}  // namespace

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) : tasks_(tasks), a_(tasks * (tasks + 1), kNaN) {
  if (tasks == 0) throw PreconditionError("accuracy matrix needs at least one task");
}

double& AccuracyMatrix::at(std::size_t i, std::size_t j) {
  if (i < 1 || i > tasks_ || j > tasks_) throw PreconditionError("accuracy matrix index out of range");
  return a_[(i - 1) * (tasks_ + 1) + j];
}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
  if (i < 1 || i > tasks_ || j > tasks_) throw PreconditionError("accuracy matrix index out of range");
  return a_[(i - 1) * (tasks_ + 1) + j];
}

bool AccuracyMatrix::has(std::size_t i, std::size_t j) const { return !std::isnan(at(i, j)); }

void AccuracyMatrix::write_csv(std::ostream& out) const {
  out << "task";
  for (std::size_t j = 0; j <= tasks_; ++j) out << ",after_" << j;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 1; i <= tasks_; ++i) {
    out << i;
    for (std::size_t j = 0; j <= tasks_; ++j) {
      out << ',';
      if (has(i, j)) out << at(i, j);
    }
    out << '\n';
  }
}

AccuracyMatrix AccuracyMatrix::read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("accuracy matrix csv: empty");
  const auto head = split_csv(line);
  if (head.size() < 3 || head[0] != "task") throw Error("accuracy matrix csv: bad header");
  AccuracyMatrix m(head.size() - 2);
  for (std::size_t i = 1; i <= m.tasks(); ++i) {
    if (!std::getline(in, line)) throw Error("accuracy matrix csv: missing rows");
    const auto c = split_csv(line);
    if (c.size() != head.size()) throw Error("accuracy matrix csv: ragged row");
    for (std::size_t j = 0; j <= m.tasks(); ++j) {
      if (c[j + 1].empty()) continue;
      try {
        m.at(i, j) = std::stod(c[j + 1]);
      } catch (const std::logic_error&) {
        throw Error("accuracy matrix csv: bad value '" + c[j + 1] + "'");
      }
    }
  }
  return m;
}

bool operator==(const AccuracyMatrix& a, const AccuracyMatrix& b) {
  if (a.tasks_ != b.tasks_) return false;
  for (std::size_t k = 0; k < a.a_.size(); ++k) {
    const bool na = std::isnan(a.a_[k]);
    if (na != std::isnan(b.a_[k])) return false;
    if (!na && a.a_[k] != b.a_[k]) return false;
  }
  return true;
}

double faa(const AccuracyMatrix& a, std::span<const std::size_t> test_counts) {
  const std::size_t T = a.tasks();
  if (test_counts.size() != T) throw PreconditionError("faa: one test count per task");
  double num = 0.0;
  std::size_t den = 0;
  for (std::size_t i = 1; i <= T; ++i) {
    if (!a.has(i, T)) throw PreconditionError("faa: final column incomplete");
    num += a.at(i, T) * static_cast<double>(test_counts[i - 1]);
    den += test_counts[i - 1];
  }
  if (den == 0) throw PreconditionError("faa: empty test set");
  return num / static_cast<double>(den);
}

double fwt(const AccuracyMatrix& a, std::span<const double> random_baseline) {
  const std::size_t T = a.tasks();
  if (T < 2) throw PreconditionError("fwt needs at least two tasks");
  if (random_baseline.size() != T + 1) throw PreconditionError("fwt: baseline indexed 0..T");
  double s = 0.0;
  for (std::size_t t = 2; t <= T; ++t) {
    if (!a.has(t, t - 1)) throw PreconditionError("fwt: A[t][t-1] missing");
    s += a.at(t, t - 1) - random_baseline[t];
  }
  return s / static_cast<double>(T - 1);
}

Network train_joint_classifier(const SampleSet& train, std::size_t num_classes, const JointConfig& cfg, Rng& rng) {
  if (train.empty()) throw PreconditionError("joint classifier: empty training set");
  for (auto l : train.labels)
    if (l >= num_classes) throw PreconditionError("joint classifier: label out of range");
  NetworkShape shape;
  shape.input_dim = train.dim();
  shape.head_width = num_classes;
  Network net(shape, rng);
  Optimizer opt(OptimizerKind::sgd, cfg.learning_rate);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(cfg.batch_size, order.size() - b));
      std::vector<std::size_t> y;
      for (auto k : idx) y.push_back(train.labels[k]);
      Tape t;
      auto x = t.constant(train.images.gather_rows(idx));
      auto loss = masked_cross_entropy(t, net.forward(t, x).logits, y);
      net.zero_grad();
      t.backward(loss);
      const auto params = net.parameters();
      opt.step(params);
    }
  }
  return net;
}

std::size_t majority_class(const Network& joint, const Tensor& samples) {
  if (samples.rows() == 0) throw PreconditionError("majority_class: no samples");
  const Tensor logits = joint.infer(samples).logits;
  std::vector<std::size_t> votes(logits.cols(), 0);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    ++votes[best];
  }
  return static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

LeakReport count_leaks(std::span<const Replacement> replacements, const std::map<std::size_t, Tensor>& dream_samples,
                       const Network& joint) {
  LeakReport r;
  r.replacements = replacements.size();
  for (const auto& rep : replacements) {
    auto it = dream_samples.find(rep.dream_id);
    if (it == dream_samples.end()) throw PreconditionError("count_leaks: no stop samples for dream " + std::to_string(rep.dream_id));
    if (rep.real_class >= joint.head_width()) throw PreconditionError("count_leaks: class outside joint classifier");
    if (majority_class(joint, it->second) == rep.real_class) ++r.leaks;
  }
  r.fraction = r.replacements ? static_cast<double>(r.leaks) / static_cast<double>(r.replacements) : 0.0;
  return r;
}

Summary summarize(std::span<const double> v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::string format_summary(const Summary& s, int decimals) {
  return fixed(s.mean, decimals) + " ± " + fixed(s.stddev, decimals);
}

void write_results_csv(std::ostream& out, std::span<const ResultRow> rows, bool header) {
  if (header) out << kResultsHeader << '\n';
  out << std::setprecision(17);
  for (const auto& r : rows)
    out << r.method << ',' << r.buffer << ',' << r.seed << ',' << r.faa << ',' << r.fwt << ',' << r.leaks << ','
        << r.leak_fraction << '\n';
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) throw Error("results csv: bad header");
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 7) throw Error("results csv: line " + std::to_string(lineno) + " has " + std::to_string(c.size()) + " fields");
    try {
      ResultRow r;
      r.method = c[0];
      r.buffer = std::stoull(c[1]);
      r.seed = std::stoull(c[2]);
      r.faa = std::stod(c[3]);
      r.fwt = std::stod(c[4]);
      r.leaks = std::stoull(c[5]);
      r.leak_fraction = std::stod(c[6]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw Error("results csv: unparsable line " + std::to_string(lineno));
    }
  }
  return rows;
}

std::vector<AggregateRow> aggregate(std::span<const ResultRow> rows) {
  struct Acc {
    std::string method;
    std::size_t buffer;
    std::vector<double> faa, fwt, lf;
  };
  std::vector<Acc> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const Acc& g) { return g.method == r.method && g.buffer == r.buffer; });
    if (it == groups.end()) {
      groups.push_back({r.method, r.buffer, {}, {}, {}});
      it = groups.end() - 1;
    }
    it->faa.push_back(r.faa);
    it->fwt.push_back(r.fwt);
    it->lf.push_back(r.leak_fraction);
  }
  std::vector<AggregateRow> out;
  for (const auto& g : groups) out.push_back({g.method, g.buffer, summarize(g.faa), summarize(g.fwt), summarize(g.lf)});
  return out;
}

void write_aggregate_csv(std::ostream& out, std::span<const AggregateRow> rows) {
  out << "method,buffer,runs,faa_mean,faa_std,fwt_mean,fwt_std,leak_fraction_mean,leak_fraction_std\n";
  out << std::setprecision(17);
  for (const auto& r : rows)
    out << r.method << ',' << r.buffer << ',' << r.faa.n << ',' << r.faa.mean << ',' << r.faa.stddev << ','
        << r.fwt.mean << ',' << r.fwt.stddev << ',' << r.leak_fraction.mean << ',' << r.leak_fraction.stddev << '\n';
}

void write_aggregate_text(std::ostream& out, std::span<const AggregateRow> rows) {
  std::size_t n = 0;
  for (const auto& r : rows) n = std::max(n, r.faa.n);
  out << "mean ± standard deviation over " << n << " runs\n";
  out << std::left << std::setw(18) << "method" << std::setw(8) << "buffer" << std::setw(20) << "FAA" << std::setw(20)
      << "FWT" << "leak fraction\n";
  for (const auto& r : rows)
    out << std::left << std::setw(18) << r.method << std::setw(8) << r.buffer << std::setw(20)
        << format_summary(r.faa) << std::setw(20) << format_summary(r.fwt) << format_summary(r.leak_fraction) << '\n';
}

void write_accuracy_svg(const std::filesystem::path& path, std::span<const Series> series, const std::string& title) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  const double W = 640, H = 400, L = 60, R = 160, Tp = 40, B = 50;
  const double pw = W - L - R, ph = H - Tp - B;
  std::size_t n = 0;
  for (const auto& s : series) n = std::max(n, s.values.size());
  auto x = [&](std::size_t i) { return L + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
  auto y = [&](double v) { return Tp + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = k / 5.0;
    f << "<line x1=\"" << L << "\" x2=\"" << L + pw << "\" y1=\"" << y(v) << "\" y2=\"" << y(v)
      << "\" stroke=\"#ddd\"/>\n";
    f << "<text x=\"" << L - 6 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">" << fixed(v, 1) << "</text>\n";
  }
  for (std::size_t i = 0; i < n; ++i)
    f << "<text x=\"" << x(i) << "\" y=\"" << Tp + ph + 18 << "\" text-anchor=\"middle\">" << i + 1 << "</text>\n";
  f << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">task</text>\n";
  f << "<text x=\"16\" y=\"" << Tp + ph / 2 << "\" transform=\"rotate(-90 16 " << Tp + ph / 2
    << ")\" text-anchor=\"middle\">accuracy</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* c = colors[s % 8];
    f << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].values.size(); ++i) f << x(i) << ',' << y(series[s].values[i]) << ' ';
    f << "\"/>\n";
    const double ly = Tp + 16.0 * static_cast<double>(s);
    f << "<line x1=\"" << L + pw + 12 << "\" x2=\"" << L + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
      << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    f << "<text x=\"" << L + pw + 36 << "\" y=\"" << ly + 4 << "\">" << series[s].name << "</text>\n";
  }
  f << "</svg>\n";
}

}  // namespace d2l
