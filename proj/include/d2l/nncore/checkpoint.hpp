#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "d2l/nncore/tensor.hpp"

namespace d2l {

struct CheckpointError : Error {
  using Error::Error;
};

// Binary tensor container shared by every checkpoint in the project.
//
//   bytes 0..3   magic "D2L1"
//   u32          format version (1)
//   u32          record count
//   per record:  u32 rank, rank x u64 dims, prod(dims) x f64 row-major
//
// All integers and doubles are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_tensors(std::ostream& out, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_tensors(std::istream& in);

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

}  // namespace d2l
