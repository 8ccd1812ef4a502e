#include "d2l/replay/buffer.hpp"

#include <istream>
#include <ostream>

#include "d2l/nncore/checkpoint.hpp"

namespace d2l {

void ReplayBuffer::reservoir_insert(ReplayItem item, Rng& rng) {
  if (item.origin != Origin::real) throw PreconditionError("replay buffer accepts real samples only");
  if (!items_.empty() && item.image.size() != items_.front().image.size()) {
    throw ShapeError("reservoir_insert: image size differs from stored items");
  }
  ++seen_;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(item));
    return;
  }
  if (capacity_ == 0) return;
  const std::size_t j = rng.below(seen_);
  if (j < capacity_) items_[j] = std::move(item);
}

SampleSet ReplayBuffer::sample_rehearsal(std::size_t batch_size, Rng& rng) const {
  if (items_.empty()) throw PreconditionError("sample_rehearsal: buffer is empty");
  const std::size_t dim = items_.front().image.size();
  SampleSet out;
  out.images = Tensor::matrix(batch_size, dim);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const ReplayItem& it = items_[rng.below(items_.size())];
    std::copy(it.image.begin(), it.image.end(), out.images.row(i).begin());
    out.labels.push_back(it.label);
  }
  return out;
}

ConditionImages ReplayBuffer::sample_conditions(std::size_t count, Rng& rng) const {
  if (items_.empty()) throw PreconditionError("sample_conditions: buffer is empty");
  ConditionImages out{Tensor::matrix(count, items_.front().image.size())};
  for (std::size_t i = 0; i < count; ++i) {
    const ReplayItem& it = items_[rng.below(items_.size())];
    std::copy(it.image.begin(), it.image.end(), out.images.row(i).begin());
  }
  return out;
}

// Serialized as a tensor container: [capacity, seen], images [n, dim],
// labels [n, 1].
void ReplayBuffer::write(std::ostream& out) const {
  const std::size_t dim = items_.empty() ? 0 : items_.front().image.size();
  Tensor meta = Tensor::row_vector({static_cast<double>(capacity_), static_cast<double>(seen_)});
  Tensor images = Tensor::matrix(items_.size(), dim);
  Tensor labels = Tensor::matrix(items_.size(), 1);
  for (std::size_t i = 0; i < items_.size(); ++i) {
    std::copy(items_[i].image.begin(), items_[i].image.end(), images.values().begin() + static_cast<std::ptrdiff_t>(i * dim));
    labels[i] = static_cast<double>(items_[i].label);
  }
  write_tensors(out, {meta, images, labels});
}

ReplayBuffer ReplayBuffer::read(std::istream& in) {
  const auto t = read_tensors(in);
  if (t.size() != 3 || t[0].size() != 2 || t[1].rows() != t[2].rows()) {
    throw CheckpointError("replay buffer checkpoint has an unexpected layout");
  }
  ReplayBuffer buf(static_cast<std::size_t>(t[0][0]));
  buf.seen_ = static_cast<std::uint64_t>(t[0][1]);
  const std::size_t dim = t[1].rank() == 2 ? t[1].shape()[1] : 0;
  for (std::size_t i = 0; i < t[1].rows(); ++i) {
    ReplayItem it;
    it.image.assign(t[1].values().begin() + static_cast<std::ptrdiff_t>(i * dim),
                    t[1].values().begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    it.label = static_cast<std::size_t>(t[2][i]);
    buf.items_.push_back(std::move(it));
  }
  if (buf.items_.size() > buf.capacity_) throw CheckpointError("replay buffer checkpoint exceeds its capacity");
  return buf;
}

}  // namespace d2l
