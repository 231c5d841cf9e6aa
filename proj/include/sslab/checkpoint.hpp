#pragma once

// Binary checkpoint: "SSL1", little-endian int64 header (V, k, d_e, h, t),
// then every array as little-endian float64 in PolicyParams field order,
// followed by the first and second Adam moments in the same order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sslab/policy.hpp"

namespace sslab {

struct Checkpoint {
  PolicyParams params;
  OptimizerState optimizer;
};

std::vector<std::uint8_t> encode_checkpoint(const PolicyParams& params, const OptimizerState& opt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const PolicyParams& params, const OptimizerState& opt,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sslab
