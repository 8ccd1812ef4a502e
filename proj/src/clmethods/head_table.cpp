#include "d2l/clmethods/head_table.hpp"

#include <set>
#include <sstream>

namespace d2l {

std::optional<std::size_t> HeadTable::assign_real(std::size_t head, std::size_t cls) {
  if (head >= slots_.size()) throw PreconditionError("assign_real: head out of range");
  if (slots_[head].role == HeadRole::real) throw PreconditionError("assign_real: head already holds a real class");
  if (head_of_real(cls)) throw PreconditionError("assign_real: class already has a head");
  std::optional<std::size_t> evicted;
  if (slots_[head].role == HeadRole::dream) evicted = slots_[head].id;
  slots_[head] = {HeadRole::real, cls};
  return evicted;
}

std::optional<std::size_t> HeadTable::assign_dream(std::size_t head, std::size_t dream) {
  if (head >= slots_.size()) throw PreconditionError("assign_dream: head out of range");
  if (slots_[head].role == HeadRole::real) throw PreconditionError("assign_dream: head holds a real class");
  if (head_of_dream(dream)) throw PreconditionError("assign_dream: dream already has a head");
  std::optional<std::size_t> evicted;
  if (slots_[head].role == HeadRole::dream) evicted = slots_[head].id;
  slots_[head] = {HeadRole::dream, dream};
  return evicted;
}

void HeadTable::release(std::size_t head) {
  if (head >= slots_.size() || slots_[head].role != HeadRole::dream) throw PreconditionError("release: not a dream head");
  slots_[head] = {};
}

std::optional<std::size_t> HeadTable::head_of_real(std::size_t cls) const {
  for (std::size_t h = 0; h < slots_.size(); ++h)
    if (slots_[h].role == HeadRole::real && slots_[h].id == cls) return h;
  return std::nullopt;
}

std::optional<std::size_t> HeadTable::head_of_dream(std::size_t dream) const {
  for (std::size_t h = 0; h < slots_.size(); ++h)
    if (slots_[h].role == HeadRole::dream && slots_[h].id == dream) return h;
  return std::nullopt;
}

std::size_t HeadTable::require_real(std::size_t cls) const {
  const auto h = head_of_real(cls);
  if (!h) throw PreconditionError("class " + std::to_string(cls) + " has no head");
  return *h;
}

std::vector<std::size_t> HeadTable::heads_with(HeadRole role) const {
  std::vector<std::size_t> out;
  for (std::size_t h = 0; h < slots_.size(); ++h)
    if (slots_[h].role == role) out.push_back(h);
  return out;
}

std::vector<std::size_t> HeadTable::available_heads() const {
  std::vector<std::size_t> out;
  for (std::size_t h = 0; h < slots_.size(); ++h)
    if (slots_[h].role != HeadRole::real) out.push_back(h);
  return out;
}

void HeadTable::check_invariants() const {
  std::set<std::size_t> reals, dreams;
  for (const HeadSlot& s : slots_) {
    if (s.role == HeadRole::real && !reals.insert(s.id).second) {
      throw Error("head table: class " + std::to_string(s.id) + " on two heads");
    }
    if (s.role == HeadRole::dream && !dreams.insert(s.id).second) {
      throw Error("head table: dream " + std::to_string(s.id) + " on two heads");
    }
  }
}

std::string HeadTable::describe() const {
  std::ostringstream os;
  for (std::size_t h = 0; h < slots_.size(); ++h) {
    if (h) os << ' ';
    switch (slots_[h].role) {
      case HeadRole::free:
        os << '.';
        break;
      case HeadRole::real:
        os << 'r' << slots_[h].id;
        break;
      case HeadRole::dream:
        os << 'd' << slots_[h].id;
        break;
    }
  }
  return os.str();
}

}  // namespace d2l
