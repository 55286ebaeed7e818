#pragma once

#include <string>
#include <vector>

#include "stpred/frames.hpp"

namespace stpred {

// "STDS" sequence container, little-endian:
//   magic "STDS" | u32 version (1) | u32 N, T, C, H, W | N*T*C*H*W f32
// values in row-major (N, T, C, H, W) order.
void write_sequences(const std::string& path,
                     const std::vector<FrameSequence>& sequences);

// Exact inverse of write_sequences. Throws BadMagicError, BadVersionError,
// TruncatedError or NonFiniteDataError on the corresponding defect.
std::vector<FrameSequence> read_sequences(const std::string& path);

}  // namespace stpred
