#include "d2l/nncore/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace d2l {

namespace {

constexpr std::array<char, 4> kMagic{'D', '2', 'L', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (!in) throw CheckpointError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_tensors(std::ostream& out, const std::vector<Tensor>& tensors) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.values()) put_le<double>(out, v);
  }
  if (!out) throw CheckpointError("checkpoint write failed");
}

std::vector<Tensor> read_tensors(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw CheckpointError("not a D2L1 checkpoint");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(in);
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > 8) throw CheckpointError("implausible tensor rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
      n *= d;
    }
    std::vector<double> values(n);
    for (double& v : values) v = get_le<double>(in);
    out.emplace_back(std::move(shape), std::move(values));
  }
  return out;
}

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_tensors(out, tensors);
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return read_tensors(in);
}

}  // namespace d2l
