#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace misd {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a parent seed and a label.
// All randomness in a run flows from one seed through labeled splits, so
// adding a new consumer never shifts the draws of an existing one.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                          std::uint64_t index = 0) noexcept;

inline Rng make_rng(std::uint64_t seed, std::string_view label,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(seed, label, index));
}

}  // namespace misd
