#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "d2l/nncore/rng.hpp"
#include "d2l/synthstream/benchmark.hpp"

namespace d2l {

enum class Origin { real, dream };

struct ReplayItem {
  std::vector<double> image;
  std::size_t label = 0;
  Origin origin = Origin::real;
};

/// Generator conditioning images. Deliberately label-free.
struct ConditionImages {
  Tensor images;
  std::size_t size() const { return images.rows(); }
};

/// Fixed-capacity reservoir of real samples.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::uint64_t seen_count() const { return seen_; }
  const std::vector<ReplayItem>& items() const { return items_; }

  /// Algorithm R. Throws PreconditionError for dream items.
  void reservoir_insert(ReplayItem item, Rng& rng);

  /// Uniform with replacement over stored items.
  SampleSet sample_rehearsal(std::size_t batch_size, Rng& rng) const;
  ConditionImages sample_conditions(std::size_t count, Rng& rng) const;

  void write(std::ostream& out) const;
  static ReplayBuffer read(std::istream& in);

  friend bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) {
    if (a.capacity_ != b.capacity_ || a.seen_ != b.seen_ || a.items_.size() != b.items_.size()) return false;
    for (std::size_t i = 0; i < a.items_.size(); ++i) {
      if (a.items_[i].image != b.items_[i].image || a.items_[i].label != b.items_[i].label) return false;
    }
    return true;
  }

 private:
  std::size_t capacity_;
  std::uint64_t seen_ = 0;
  std::vector<ReplayItem> items_;
};

}  // namespace d2l
