#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "d2l/nncore/tensor.hpp"

namespace d2l {

enum class HeadRole { free, real, dream };

struct HeadSlot {
  HeadRole role = HeadRole::free;
  std::size_t id = 0;  // class id (real) or dream id (dream)
};

/// Role of every output neuron. Real class ids and dream ids are separate
/// namespaces; each occupies at most one head.
class HeadTable {
 public:
  HeadTable() = default;
  explicit HeadTable(std::size_t width) : slots_(width) {}

  std::size_t width() const { return slots_.size(); }
  const HeadSlot& slot(std::size_t head) const { return slots_.at(head); }

  /// Puts real class `cls` on `head`. The head must not hold a real class.
  /// Returns the dream evicted from it, if any.
  std::optional<std::size_t> assign_real(std::size_t head, std::size_t cls);
  /// Puts dream `dream` on a non-real head; returns the evicted dream, if any.
  std::optional<std::size_t> assign_dream(std::size_t head, std::size_t dream);
  /// Frees a dream head.
  void release(std::size_t head);
  /// Appends free heads (incremental strategy).
  void add_heads(std::size_t count) { slots_.resize(slots_.size() + count); }

  std::optional<std::size_t> head_of_real(std::size_t cls) const;
  std::optional<std::size_t> head_of_dream(std::size_t dream) const;
  /// Throws PreconditionError if `cls` has no head.
  std::size_t require_real(std::size_t cls) const;

  std::vector<std::size_t> heads_with(HeadRole role) const;
  std::vector<std::size_t> real_heads() const { return heads_with(HeadRole::real); }
  std::vector<std::size_t> dream_heads() const { return heads_with(HeadRole::dream); }
  std::vector<std::size_t> free_heads() const { return heads_with(HeadRole::free); }
  /// C_avail: every head not holding a real class.
  std::vector<std::size_t> available_heads() const;

  /// Each head one role, each id on at most one head.
  void check_invariants() const;
  std::string describe() const;

 private:
  std::vector<HeadSlot> slots_;
};

}  // namespace d2l
