#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foam/common.hpp"

namespace foam {

/// Binary (P5) 8-bit PGM.
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, std::size_t h,
               std::size_t w);

/// Linear [0,1] -> 0..255 with clamping.
std::vector<std::uint8_t> pgm_from_unit(const std::vector<float>& data);

/// Log-scaled magnitude rendering: v = 255 * log(1+M) / log(1+maxM).
std::vector<std::uint8_t> pgm_from_log_magnitude(const std::vector<float>& magnitude);

/// Phase in (-pi, pi] mapped linearly onto 0..255.
std::vector<std::uint8_t> pgm_from_phase(const std::vector<float>& phase);

}  // namespace foam
