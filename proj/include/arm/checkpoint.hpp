#pragma once

// Binary checkpoint container.
//
//   "ARMCKPT\0"  u32 version
//   u32 n, n x (str key, str value)        header
//   u32 n, n x str                         vocabulary
//   u64 n, n x (str path, u32 rank, rank x u64 extent, values)
//   u64 n, n x (str path, sq_grad_avg, sq_update_avg)
//   "END\0"
//
// Integers and doubles are little-endian; str is u32 length + bytes.

#include <cstdint>
#include <map>
#include <string>

#include "arm/autodiff.hpp"
#include "arm/seq_model.hpp"

namespace arm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> header;
  Vocab vocab;
  ParameterStore store;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
// Throws IoError when the file cannot be opened and FormatError on any
// malformed, truncated or version-mismatched contents.
Checkpoint load_checkpoint(const std::string& path);

// Serialized bytes, for in-memory comparisons.
std::string checkpoint_bytes(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source = "<bytes>");

// Replaces values and accumulators of `target` with those of `loaded`.
// Both stores must hold exactly the same paths and shapes; on mismatch
// nothing is modified.
void restore_parameters(const ParameterStore& loaded, ParameterStore& target);

}  // namespace arm
