#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2l/clmethods/head_table.hpp"
#include "d2l/nncore/network.hpp"
#include "d2l/replay/buffer.hpp"

namespace d2l {

enum class Method { finetune, er, er_ace };
enum class DreamStrategy { none, d2l_replace, at_beginning, incremental };
enum class InsertCadence { every_epoch, first_epoch };

const char* method_name(Method m);
Method parse_method(const std::string& s);
const char* strategy_name(DreamStrategy s);
DreamStrategy parse_strategy(const std::string& s);

struct MethodConfig {
  Method method = Method::er;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.03;
  std::size_t buffer_capacity = 200;
  bool use_dreams = false;
  DreamStrategy strategy = DreamStrategy::none;
  /// Dream samples per stream batch, as a fraction of the real samples.
  double dream_ratio = 1.0;
  InsertCadence cadence = InsertCadence::every_epoch;

  /// Throws PreconditionError on inconsistent settings.
  void validate() const;
};

/// Dream samples currently in play. Labels are head indices.
struct DreamPool {
  SampleSet samples;
  std::vector<std::size_t> heads;                   // distinct heads, ascending
  std::vector<std::vector<std::size_t>> rows_of;    // rows per entry of `heads`

  bool empty() const { return heads.empty(); }
  /// Groups rows by label.
  static DreamPool from(SampleSet samples);
};

struct LossTerms {
  Var total;
  Var ce;                // stream term
  std::optional<Var> cl; // rehearsal term
};

/// ER: CE(stream over seen-real and active-dream heads) + CE(buffer over seen-real heads).
LossTerms er_loss(Tape& t, Var logits_stream, std::span<const std::size_t> y_stream,
                  std::optional<Var> logits_buf, std::span<const std::size_t> y_buf, const HeadTable& table,
                  std::span<const std::size_t> current_task_heads);
/// ER-ACE: stream CE restricted to current-task real heads, active dream heads
/// and heads present in the stream batch; buffer CE over seen-real heads.
LossTerms er_ace_loss(Tape& t, Var logits_stream, std::span<const std::size_t> y_stream,
                      std::optional<Var> logits_buf, std::span<const std::size_t> y_buf, const HeadTable& table,
                      std::span<const std::size_t> current_task_heads);

/// Sorted union of head lists.
std::vector<std::size_t> union_heads(std::initializer_list<std::span<const std::size_t>> parts);

enum class Phase {
  bootstrap,         // task 1, CE over task-1 heads
  dream_finetune,    // task 1 after dreaming, CE over task-1 and dream heads
  continual,         // tasks 2..T, CE + rehearsal term
};

struct StepLoss {
  double ce = 0.0;
  double cl = 0.0;
  friend bool operator==(const StepLoss&, const StepLoss&) = default;
};

struct EpochLog {
  std::size_t task = 0;
  std::size_t epoch = 0;
  std::string phase;
  double loss_ce = 0.0;
  double loss_cl = 0.0;
  double train_acc = 0.0;
};

struct TrainLog {
  std::vector<StepLoss> steps;
  std::vector<EpochLog> epochs;
};

/// Header plus one row per epoch: run_id,task,epoch,phase,loss_ce,loss_cl,train_acc
void write_epoch_csv(std::ostream& out, const std::string& run_id, const TrainLog& log, bool header = true);

struct TrainContext {
  Network& net;
  ReplayBuffer& buffer;
  const HeadTable& table;
  std::vector<std::size_t> current_classes;  // real class ids of the current task
  const DreamPool* dreams = nullptr;         // active dream samples, or null
  Rng& data_rng;                             // stream order, rehearsal draws, reservoir
  Rng& dream_rng;                            // dream draws only
  std::size_t task = 0;                      // 1-based
  TrainLog* log = nullptr;
};

/// Runs cfg.epochs epochs over `train` (labels = class ids).
void train_task(TrainContext& ctx, const SampleSet& train, const MethodConfig& cfg, Phase phase);

/// Plain CE on task 1: heads must already be assigned to `train`'s classes.
inline void bootstrap_task1(TrainContext& ctx, const SampleSet& train, const MethodConfig& cfg) {
  train_task(ctx, train, cfg, Phase::bootstrap);
}

/// Class-incremental accuracy: argmax restricted to `heads`, prediction
/// counted correct when it lands on the sample's class head.
double accuracy(const Network& net, const SampleSet& set, const HeadTable& table, std::span<const std::size_t> heads);

// Real-class to dream-head assignment.

enum class AssignmentRule { greedy, optimal };

struct RealAssignment {
  std::vector<std::pair<std::size_t, std::size_t>> class_to_head;  // (class id, head), in assignment order
  std::vector<std::size_t> removed_dreams;                         // dream ids displaced by real classes
  /// likelihood[i][k]: mean probability of dream head k (candidates order) on class i
  std::vector<std::vector<double>> likelihood;
  std::vector<std::size_t> candidate_heads;
};

/// Mean softmax (over the full head width) of each candidate head, per class.
std::vector<std::vector<double>> head_likelihoods(const Network& net, const SampleSet& data,
                                                  std::span<const std::size_t> classes,
                                                  std::span<const std::size_t> heads);

/// Greedy: repeatedly takes the highest (class, dream head) likelihood, ties to
/// lowest class then lowest head. Optimal: maximum total likelihood.
/// Classes that find no dream head take free heads in ascending order.
RealAssignment assign_real_classes(const Network& net, const SampleSet& data, std::span<const std::size_t> classes,
                                   HeadTable& table, AssignmentRule rule = AssignmentRule::greedy);

/// Index pairs (class row, candidate column) chosen by the greedy rule on a
/// likelihood matrix; pure function used by assign_real_classes.
std::vector<std::pair<std::size_t, std::size_t>> greedy_assignment(const std::vector<std::vector<double>>& lik);
std::vector<std::pair<std::size_t, std::size_t>> optimal_assignment(const std::vector<std::vector<double>>& lik);
/// Enumerates every injective assignment of size min(rows, cols) and keeps
/// the one whose likelihoods, sorted descending, are lexicographically largest.
/// Equal likelihoods rank the lower class first, then the lower head.
std::vector<std::pair<std::size_t, std::size_t>> brute_force_assignment(const std::vector<std::vector<double>>& lik);

}  // namespace d2l
