#include "d2l/oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include "d2l/nncore/optimizer.hpp"

namespace d2l {

Window window_at(const DreamTrajectory& t, std::size_t end) {
  if (end + 1 < kWindowLength || end >= t.records.size()) throw PreconditionError("window_at: not enough records");
  Window w{};
  for (std::size_t k = 0; k < kWindowLength; ++k) {
    const auto z = t.records[end + 1 - kWindowLength + k].z.values();
    std::copy(z.begin(), z.end(), w.begin() + static_cast<std::ptrdiff_t>(4 * k));
  }
  return w;
}

const char* stop_rule_name(StopRuleKind k) {
  switch (k) {
    case StopRuleKind::n_of_k:
      return "n-of-k";
    case StopRuleKind::consecutive:
      return "consecutive";
    case StopRuleKind::fixed_optimization:
      return "fixed-optimization";
    case StopRuleKind::never:
      return "never";
  }
  return "?";
}

StopRuleKind parse_stop_rule(const std::string& s) {
  for (auto k : {StopRuleKind::n_of_k, StopRuleKind::consecutive, StopRuleKind::fixed_optimization, StopRuleKind::never})
    if (s == stop_rule_name(k)) return k;
  throw PreconditionError("unknown stop rule '" + s + "'");
}

bool should_stop(std::span<const double> predictions, const StopRule& rule) {
  switch (rule.kind) {
    case StopRuleKind::n_of_k: {
      if (predictions.size() < rule.k) return false;
      std::size_t positive = 0;
      for (double p : predictions.last(rule.k)) positive += p >= rule.threshold;
      return positive >= rule.n;
    }
    case StopRuleKind::consecutive: {
      if (rule.n == 0 || predictions.size() < rule.n) return false;
      for (double p : predictions.last(rule.n))
        if (p < rule.threshold) return false;
      return true;
    }
    case StopRuleKind::fixed_optimization:
    case StopRuleKind::never:
      return false;
  }
  return false;
}

bool fixed_stop(std::span<const std::size_t> history, std::size_t target, std::size_t length) {
  if (length == 0 || history.size() < length) return false;
  for (std::size_t p : history.last(length))
    if (p != target) return false;
  return true;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw PreconditionError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double diversity_floor(std::span<const DreamTrajectory> trajectories, double q) {
  std::vector<double> d0;
  for (const DreamTrajectory& t : trajectories)
    if (!t.records.empty()) d0.push_back(t.records.front().z.diversity);
  return percentile(std::move(d0), q);
}

std::optional<std::size_t> stop_label(const DreamTrajectory& t, const LabelConfig& cfg, double div_floor) {
  for (const IterationRecord& r : t.records) {
    if (r.target_prob >= cfg.band_lo && r.target_prob <= cfg.band_hi && r.z.diversity >= div_floor &&
        r.z.quality >= cfg.quality_floor) {
      return r.iteration;
    }
  }
  return std::nullopt;
}

LabeledDataset label_trajectories(std::span<const DreamTrajectory> trajectories, const LabelConfig& cfg,
                                  double validation_fraction, std::uint64_t seed) {
  LabeledDataset ds;
  if (trajectories.empty()) return ds;
  ds.diversity_floor = diversity_floor(trajectories, cfg.diversity_percentile);
  Rng rng(seed);
  for (std::size_t id = 0; id < trajectories.size(); ++id) {
    const DreamTrajectory& t = trajectories[id];
    const auto label = stop_label(t, cfg, ds.diversity_floor);
    ds.labels.push_back(label);
    const bool to_validation = rng.uniform() < validation_fraction;
    if (!label) {
      ++ds.discarded;
      continue;
    }
    auto& dest = to_validation ? ds.validation : ds.train;
    for (std::size_t end = kWindowLength - 1; end < t.records.size(); ++end) {
      const std::size_t it = t.records[end].iteration;
      dest.push_back({id, it, window_at(t, end), it >= *label ? 1 : 0});
    }
  }
  return ds;
}

void write_windows_csv(std::ostream& out, const LabeledDataset& ds) {
  out << "trajectory,iteration";
  for (std::size_t k = 0; k < kWindowWidth; ++k) out << ",f" << k;
  out << ",label,split\n";
  out.precision(17);
  for (const auto* part : {&ds.train, &ds.validation}) {
    for (const LabeledWindow& w : *part) {
      out << w.trajectory << ',' << w.iteration;
      for (double v : w.x) out << ',' << v;
      out << ',' << w.label << ',' << (part == &ds.train ? "train" : "validation") << '\n';
    }
  }
}

OracleNet::OracleNet(std::size_t hidden, Rng& rng)
    : net_({kWindowWidth, hidden, 1}, {Activation::relu, Activation::identity}, rng) {}

Mlp& OracleNet::body() {
  if (frozen_) throw PreconditionError("oracle is frozen");
  return net_;
}

Tensor OracleNet::standardize(std::span<const LabeledWindow> rows) const {
  Tensor x = Tensor::matrix(rows.size(), kWindowWidth);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < kWindowWidth; ++k) x.at(i, k) = (rows[i].x[k] - mean_[k]) / scale_[k];
  return x;
}

double OracleNet::logit(const Window& x) const {
  Tensor in = Tensor::matrix(1, kWindowWidth);
  for (std::size_t k = 0; k < kWindowWidth; ++k) in[k] = (x[k] - mean_[k]) / scale_[k];
  Tape t;
  return t.value(net_.forward(t, t.constant_ref(in)))[0];
}

double OracleNet::predict(const Window& x) const { return 1.0 / (1.0 + std::exp(-logit(x))); }

std::uint64_t OracleNet::hash() const {
  std::uint64_t h = net_.hash();
  h = fnv1a(mean_.values().data(), mean_.size() * sizeof(double), h);
  return fnv1a(scale_.values().data(), scale_.size() * sizeof(double), h);
}

std::vector<Tensor> OracleNet::export_tensors() const {
  std::vector<Tensor> out{mean_, scale_};
  for (const Tensor& t : net_.export_tensors()) out.push_back(t);
  return out;
}

OracleNet OracleNet::from_tensors(const std::vector<Tensor>& t) {
  if (t.size() != 6 || t[0].size() != kWindowWidth || t[1].size() != kWindowWidth || t[2].rank() != 2) {
    throw PreconditionError("oracle checkpoint has an unexpected layout");
  }
  Rng scratch(0);
  OracleNet o(t[2].cols(), scratch);
  o.mean_ = t[0];
  o.scale_ = t[1];
  o.net_.import_tensors({t.begin() + 2, t.end()});
  o.frozen_ = true;
  return o;
}

namespace {

std::vector<double> balanced_weights(std::span<const LabeledWindow> rows) {
  std::size_t pos = 0;
  for (const auto& r : rows) pos += r.label == 1;
  const std::size_t neg = rows.size() - pos;
  const double n = static_cast<double>(rows.size());
  std::vector<double> w;
  for (const auto& r : rows) {
    const std::size_t cnt = r.label == 1 ? pos : neg;
    w.push_back(cnt ? n / (2.0 * static_cast<double>(cnt)) : 1.0);
  }
  return w;
}

double eval_bce(const OracleNet& o, std::span<const LabeledWindow> rows, const std::vector<double>& w) {
  Tape t;
  const Tensor x = o.standardize(rows);
  std::vector<double> y;
  for (const auto& r : rows) y.push_back(r.label);
  return t.value(bce_with_logits(t, o.body().forward(t, t.constant_ref(x)), y, w))[0];
}

}  // namespace

double oracle_accuracy(const OracleNet& net, std::span<const LabeledWindow> rows) {
  if (rows.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : rows) ok += (net.predict(r.x) >= 0.5 ? 1 : 0) == r.label;
  return static_cast<double>(ok) / static_cast<double>(rows.size());
}

std::optional<std::size_t> replay_stop(const DreamTrajectory& t, const OracleNet& oracle, const StopRule& rule) {
  std::vector<double> preds;
  for (std::size_t end = kWindowLength - 1; end < t.records.size(); ++end) {
    preds.push_back(oracle.predict(window_at(t, end)));
    if (should_stop(preds, rule)) return t.records[end].iteration;
  }
  return std::nullopt;
}

OracleNet train_oracle(std::span<const LabeledWindow> train, std::span<const LabeledWindow> validation,
                       const OracleTrainConfig& cfg, OracleTrainReport* report) {
  std::set<int> labels;
  for (const auto& r : train) labels.insert(r.label);
  if (labels.size() != 2) throw PreconditionError("train_oracle: training windows must contain both labels");

  Rng rng(cfg.seed);
  OracleNet o(cfg.hidden, rng);
  for (std::size_t k = 0; k < kWindowWidth; ++k) {
    double m = 0, v = 0;
    for (const auto& r : train) m += r.x[k];
    m /= static_cast<double>(train.size());
    for (const auto& r : train) v += (r.x[k] - m) * (r.x[k] - m);
    const double sd = std::sqrt(v / static_cast<double>(train.size()));
    o.mean()[k] = m;
    o.scale()[k] = sd > 1e-12 ? sd : 1.0;
  }

  const Tensor x = o.standardize(train);
  const std::vector<double> w = balanced_weights(train);
  std::vector<double> y;
  for (const auto& r : train) y.push_back(r.label);
  const auto monitor = validation.empty() ? train : validation;
  const std::vector<double> wm = balanced_weights(monitor);

  Optimizer opt(OptimizerKind::adam, cfg.learning_rate);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  OracleTrainReport rep;
  rep.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best = o.body().export_tensors();
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + s, e - s);
      std::vector<double> yb, wb;
      for (std::size_t r : rows) {
        yb.push_back(y[r]);
        wb.push_back(w[r]);
      }
      const Tensor xb = x.gather_rows(rows);
      o.body().zero_grad();
      Tape t;
      t.backward(bce_with_logits(t, o.body().forward(t, t.constant_ref(xb), Binding::trainable), yb, wb));
      const auto ps = o.body().parameters();
      opt.step(ps);
    }
    rep.epochs_run = epoch + 1;
    const double vl = eval_bce(o, monitor, wm);
    if (vl < rep.best_val_loss) {
      rep.best_val_loss = vl;
      rep.best_epoch = epoch;
      best = o.body().export_tensors();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  o.body().import_tensors(best);
  o.freeze();
  rep.val_accuracy = oracle_accuracy(o, monitor);
  rep.train_accuracy = oracle_accuracy(o, train);
  if (report) *report = rep;
  return o;
}

std::vector<FeatureImportance> select_features(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                               const std::vector<std::string>& names, std::uint64_t seed,
                                               std::size_t repeats) {
  const std::size_t n = x.size();
  if (n < 10 || y.size() != n) throw PreconditionError("select_features: need at least 10 labeled rows");
  const std::size_t d = x[0].size();
  if (names.size() != d) throw PreconditionError("select_features: name count mismatch");

  // standardized design matrix
  Tensor xs = Tensor::matrix(n, d);
  for (std::size_t k = 0; k < d; ++k) {
    double m = 0, v = 0;
    for (const auto& r : x) m += r[k];
    m /= static_cast<double>(n);
    for (const auto& r : x) v += (r[k] - m) * (r[k] - m);
    const double sd = std::sqrt(v / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) xs.at(i, k) = sd > 1e-12 ? (x[i][k] - m) / sd : 0.0;
  }
  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  const std::size_t n_train = n * 7 / 10;
  const std::span<const std::size_t> tr(perm.data(), n_train), te(perm.data() + n_train, n - n_train);

  const Tensor xtr = xs.gather_rows(tr);
  std::vector<double> ytr, yte;
  for (std::size_t i : tr) ytr.push_back(y[i]);
  for (std::size_t i : te) yte.push_back(y[i]);

  Mlp probe({d, 1}, {Activation::identity}, rng);
  Optimizer opt(OptimizerKind::adam, 0.05);
  for (int epoch = 0; epoch < 300; ++epoch) {
    probe.zero_grad();
    Tape t;
    t.backward(bce_with_logits(t, probe.forward(t, t.constant_ref(xtr), Binding::trainable), ytr));
    const auto ps = probe.parameters();
    opt.step(ps);
  }
  auto heldout_bce = [&](const Tensor& xt) {
    Tape t;
    return t.value(bce_with_logits(t, probe.forward(t, t.constant_ref(xt)), yte))[0];
  };
  const Tensor xte = xs.gather_rows(te);
  const double base = heldout_bce(xte);

  std::vector<FeatureImportance> out;
  for (std::size_t k = 0; k < d; ++k) {
    std::vector<double> deltas;
    for (std::size_t r = 0; r < repeats; ++r) {
      Tensor shuffled = xte;
      std::vector<std::size_t> p(te.size());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = i;
      for (std::size_t i = p.size() - 1; i > 0; --i) std::swap(p[i], p[rng.below(i + 1)]);
      for (std::size_t i = 0; i < p.size(); ++i) shuffled.at(i, k) = xte.at(p[i], k);
      deltas.push_back(heldout_bce(shuffled) - base);
    }
    double m = 0, v = 0;
    for (double dlt : deltas) m += dlt;
    m /= static_cast<double>(repeats);
    for (double dlt : deltas) v += (dlt - m) * (dlt - m);
    out.push_back({names[k], m, repeats > 1 ? std::sqrt(v / static_cast<double>(repeats - 1)) : 0.0});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.importance > b.importance; });
  return out;
}

}  // namespace d2l
