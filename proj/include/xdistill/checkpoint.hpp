#pragma once

#include <string>
#include <utility>
#include <vector>

#include "xdistill/tensor.hpp"

namespace xdistill {

// Versioned container of named tensors:
//   magic "XDCK", u32 version, u64 tensor count, then per tensor
//   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 payload.
// All integers and floats little-endian. Round-trips bit-exactly. Writes go
// to a temp file that is renamed into place.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

}  // namespace xdistill
