#include "foam/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace foam {

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, std::size_t h,
               std::size_t w) {
  if (pixels.size() != h * w) throw ShapeError("write_pgm: pixel count does not match extents");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw IoError("short write: " + path);
}

std::vector<std::uint8_t> pgm_from_unit(const std::vector<float>& data) {
  std::vector<std::uint8_t> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float v = std::min(std::max(data[i], 0.0f), 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

std::vector<std::uint8_t> pgm_from_log_magnitude(const std::vector<float>& magnitude) {
  float max_m = 0.0f;
  for (float v : magnitude) max_m = std::max(max_m, v);
  std::vector<std::uint8_t> out(magnitude.size(), 0);
  if (max_m <= 0.0f) return out;
  const double denom = std::log1p(static_cast<double>(max_m));
  for (std::size_t i = 0; i < magnitude.size(); ++i) {
    const double v = std::log1p(static_cast<double>(std::max(magnitude[i], 0.0f))) / denom;
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

std::vector<std::uint8_t> pgm_from_phase(const std::vector<float>& phase) {
  std::vector<std::uint8_t> out(phase.size());
  for (std::size_t i = 0; i < phase.size(); ++i) {
    const double unit = (static_cast<double>(phase[i]) + std::numbers::pi) / (2.0 * std::numbers::pi);
    out[i] = static_cast<std::uint8_t>(std::lround(std::min(std::max(unit, 0.0), 1.0) * 255.0));
  }
  return out;
}

}  // namespace foam
