#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2l/nncore/network.hpp"
#include "d2l/oracle/features.hpp"

namespace d2l {

inline constexpr std::size_t kWindowLength = 3;
inline constexpr std::size_t kWindowWidth = 4 * kWindowLength;

using Window = std::array<double, kWindowWidth>;

/// One prompt-optimization iteration.
struct IterationRecord {
  std::size_t iteration = 0;
  Tensor p_soft;
  FeatureVector z;
  double loss = 0.0;         // mean target CE on the probe batch
  double target_prob = 0.0;  // mean target probability on the probe batch
  std::size_t prediction = 0;  // argmax of the mean probe-batch softmax
};

struct DreamTrajectory {
  std::size_t target_head = 0;
  std::vector<IterationRecord> records;
  std::optional<std::size_t> stop_iteration;
  std::size_t pool_classes = 0;  // classes in the conditioning pool, 0 if unknown
};

/// Flattened [z_{i-2}, z_{i-1}, z_i] ending at record `end`.
Window window_at(const DreamTrajectory& t, std::size_t end);

// Stopping rules.

enum class StopRuleKind { n_of_k, consecutive, fixed_optimization, never };

struct StopRule {
  StopRuleKind kind = StopRuleKind::n_of_k;
  std::size_t n = 2;
  std::size_t k = 3;
  double threshold = 0.5;
  std::size_t fixed_length = 4;
};

const char* stop_rule_name(StopRuleKind k);
StopRuleKind parse_stop_rule(const std::string& s);

/// Oracle rules over probability outputs, oldest first. n_of_k: at least n of
/// the last k above threshold; consecutive: the last n all above threshold.
/// Fewer than k (resp. n) predictions never stop.
bool should_stop(std::span<const double> predictions, const StopRule& rule);
/// Last `length` classifier predictions all equal `target`.
bool fixed_stop(std::span<const std::size_t> history, std::size_t target, std::size_t length = 4);

// Labeling.

struct LabelConfig {
  double band_lo = 0.2;
  double band_hi = 0.6;
  double diversity_percentile = 0.10;
  double quality_floor = 0.5;
};

/// Linear-interpolated percentile, q in [0,1].
double percentile(std::vector<double> values, double q);
/// Percentile of iteration-0 diversity across trajectories.
double diversity_floor(std::span<const DreamTrajectory> trajectories, double q);


/// Earliest iteration whose target probability is in the band, whose
/// diversity reaches the floor and whose quality reaches the quality floor.
std::optional<std::size_t> stop_label(const DreamTrajectory& t, const LabelConfig& cfg, double div_floor);

struct LabeledWindow {
  std::size_t trajectory = 0;
  std::size_t iteration = 0;  // index of the newest z in the window
  Window x{};
  int label = 0;
};

struct LabeledDataset {
  std::vector<LabeledWindow> train;
  std::vector<LabeledWindow> validation;
  std::vector<std::optional<std::size_t>> labels;  // per trajectory
  std::size_t discarded = 0;
  double diversity_floor = 0.0;
};

/// Windows before the label are 0, at/after are 1. Trajectories without a
/// label are discarded. Whole trajectories go to validation with probability
/// `validation_fraction`.
LabeledDataset label_trajectories(std::span<const DreamTrajectory> trajectories, const LabelConfig& cfg,
                                  double validation_fraction, std::uint64_t seed);

/// trajectory,iteration,f0..f11,label
void write_windows_csv(std::ostream& out, const LabeledDataset& ds);

// Oracle network.

struct OracleTrainConfig {
  double learning_rate = 1e-3;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  std::size_t batch_size = 32;
  std::size_t hidden = 32;
  std::uint64_t seed = 0;
};

struct OracleTrainReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double val_accuracy = 0.0;
  double train_accuracy = 0.0;
};

/// 12 -> hidden (rectifier) -> 1 (sigmoid) on standardized windows.
class OracleNet {
 public:
  OracleNet() = default;
  OracleNet(std::size_t hidden, Rng& rng);

  double predict(const Window& x) const;
  double logit(const Window& x) const;
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }
  std::uint64_t hash() const;

  std::vector<Tensor> export_tensors() const;
  static OracleNet from_tensors(const std::vector<Tensor>& t);

  // Training access; throws once frozen.
  Mlp& body();
  const Mlp& body() const { return net_; }
  Tensor& mean() { return mean_; }
  Tensor& scale() { return scale_; }
  Tensor standardize(std::span<const LabeledWindow> rows) const;

 private:
  Mlp net_;
  Tensor mean_ = Tensor::matrix(1, kWindowWidth, 0.0);
  Tensor scale_ = Tensor::matrix(1, kWindowWidth, 1.0);
  bool frozen_ = false;
};

/// Adam + class-balanced BCE with early stopping on validation loss; the
/// best-validation weights are kept and frozen.
OracleNet train_oracle(std::span<const LabeledWindow> train, std::span<const LabeledWindow> validation,
                       const OracleTrainConfig& cfg, OracleTrainReport* report = nullptr);

double oracle_accuracy(const OracleNet& net, std::span<const LabeledWindow> rows);

/// The iteration at which `rule` would have stopped a recorded trajectory
/// (recorded with the oracle disabled), or nullopt if it never fires.
std::optional<std::size_t> replay_stop(const DreamTrajectory& t, const OracleNet& oracle, const StopRule& rule);

// Feature selection.

struct FeatureImportance {
  std::string name;
  double importance = 0.0;  // mean held-out BCE increase when the column is permuted
  double stddev = 0.0;      // over repeats
};

/// Permutation importance under a logistic probe, sorted descending.
std::vector<FeatureImportance> select_features(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                               const std::vector<std::string>& names, std::uint64_t seed,
                                               std::size_t repeats = 10);

}  // namespace d2l
