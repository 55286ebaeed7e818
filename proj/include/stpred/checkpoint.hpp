#pragma once

#include <cstdint>
#include <string>

#include "stpred/model.hpp"

namespace stpred {

// "STCK" checkpoint, little-endian:
//   magic "STCK" | u32 version (1) | u64 config digest | u32 epoch |
//   u32 tensor count | per tensor: u32 name length, name bytes, u32 rank,
//   u32 dims[rank], f32 data.
void save_checkpoint(const std::string& path, std::uint64_t digest,
                     ModelParams<float>& params, int epoch);

// Verifies magic, version and digest before touching any tensor data;
// returns the stored epoch. Throws DigestMismatchError on a digest that
// differs from `digest`, and the STDS-style format errors otherwise.
int load_checkpoint(const std::string& path, std::uint64_t digest,
                    ModelParams<float>& params);

}  // namespace stpred
