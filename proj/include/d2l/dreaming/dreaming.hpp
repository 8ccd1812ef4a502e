#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "d2l/clmethods/head_table.hpp"
#include "d2l/clmethods/training.hpp"
#include "d2l/generator/generator.hpp"
#include "d2l/oracle/oracle.hpp"
#include "d2l/replay/buffer.hpp"

namespace d2l {

struct DreamConfig {
  std::size_t max_iterations = 500;
  double learning_rate = 0.1;
  std::size_t probe_size = 8;  // fixed conditions used for z_i and the trajectory log
  std::size_t samples_per_class = 50;
  StopRule stop;
  bool keep_probe_samples = false;  // store the probe batch in every record

  void validate() const;
};

/// The prompt-optimization objective: CE of the classifier on G(cond, p) toward
/// `target_head` over the full head width.
Var prompt_loss(Tape& t, const Network& net, const FrozenGenerator& g, Var cond, Var p_soft, Var p_text, Var eps,
                std::size_t target_head);

struct PromptResult {
  Prompt prompt;  // snapshot at the stop iteration (or the last one)
  DreamTrajectory trajectory;
  Tensor stop_samples;     // probe batch generated at the returned prompt
  double stop_target_prob = 0.0;
  std::size_t iterations = 0;  // records in the trajectory
  bool stopped = false;        // ended by the stop rule, not the cap
  std::vector<Tensor> probe_samples;  // per record, when kept
};

/// Adam on p_soft (initialized to zero) against prompt_loss, one condition per
/// step drawn from `pool`. The stop rule is checked after each record; the
/// oracle may be null only for the fixed and never rules.
PromptResult optimize_prompt(const Network& net, const FrozenGenerator& g, std::size_t target_head,
                             const std::string& label, const Tensor& pool, const OracleNet* oracle,
                             const DreamConfig& cfg, Rng& rng);

/// n samples G(x_b, p, eps) with conditions drawn from the buffer.
Tensor generate_dream_class(const FrozenGenerator& g, const Prompt& prompt, const ReplayBuffer& buffer,
                            std::size_t n, Rng& rng);

struct DreamMapping {
  std::size_t head = 0;
  std::vector<std::size_t> candidates;
  std::vector<double> scores;  // mean -log softmax per candidate
};

/// Dream-head mapping: the available (non-real) head, not in `excluded`, with the lowest
/// mean negative log-likelihood on `images`. Ties go to the lowest head.
DreamMapping map_dream_class(const Network& net, const Tensor& images, const HeadTable& table,
                             std::span<const std::size_t> excluded = {});
/// Independent check: per-sample log-softmax summed head by head.
std::size_t brute_force_dream_head(const Network& net, const Tensor& images, std::span<const std::size_t> candidates);

struct DreamEntry {
  std::size_t id = 0;
  Prompt prompt;
  std::size_t source_class = 0;
  std::size_t created_task = 0;
  std::size_t stop_iteration = 0;
  double stop_target_prob = 0.0;
  double creation_likelihood = 0.0;  // mean softmax of its head at creation
  FeatureVector stop_features;
};

/// Active dream classes. Prompts persist; samples are regenerated each task.
class DreamInventory {
 public:
  std::size_t next_id() const { return next_id_; }
  std::size_t add(DreamEntry e);  // assigns the id
  void remove(std::size_t id);
  bool contains(std::size_t id) const { return entries_.count(id) != 0; }
  const DreamEntry& at(std::size_t id) const { return entries_.at(id); }
  DreamEntry& at(std::size_t id) { return entries_.at(id); }
  std::vector<std::size_t> ids() const;
  std::size_t size() const { return entries_.size(); }
  bool operator==(const DreamInventory& o) const { return ids() == o.ids(); }

  /// Every active id sits on exactly one head and every dream head is active.
  void check_against(const HeadTable& table) const;

 private:
  std::map<std::size_t, DreamEntry> entries_;
  std::size_t next_id_ = 0;
};

struct NewDream {
  DreamEntry entry;  // id ignored
  Tensor images;     // generated dataset used for head mapping
};

struct InventoryUpdate {
  std::vector<std::pair<std::size_t, std::size_t>> placed;  // (dream id, head)
  std::vector<std::size_t> evicted;                          // dream ids displaced by new dreams
  std::size_t appended_heads = 0;
  std::vector<DreamMapping> mappings;                        // mapping calls, in order
};

/// Applies a strategy's update for dreams created after `task`:
/// d2l-replace maps each with map_dream_class (heads claimed this round are excluded);
/// at-beginning behaves the same on task 1 and ignores later dreams;
/// incremental appends one head per dream; none ignores dreams.
InventoryUpdate update_inventory(DreamStrategy strategy, std::vector<NewDream> dreams, std::size_t task,
                                 DreamInventory& inventory, HeadTable& table, Network& net, Rng& rng);

/// Regenerates every active dream from its prompt; labels are head indices.
DreamPool regenerate_pool(const DreamInventory& inventory, const HeadTable& table, const FrozenGenerator& g,
                          const ReplayBuffer& buffer, std::size_t samples_per_class, Rng& rng);

/// dream_<id>/sample_NNN.pgm, dream_<id>/prompt.csv and a manifest.json.
void dump_dream(const std::filesystem::path& dir, const DreamEntry& e, const Tensor& images, std::size_t grid);
void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t grid);

}  // namespace d2l
