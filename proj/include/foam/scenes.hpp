#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foam/rng.hpp"
#include "foam/tensor.hpp"

namespace foam::scenes {

struct SceneConfig {
  std::size_t height = 64;  // power of two, >= 32
  std::size_t width = 64;
  std::size_t n_foreground_min = 1;
  std::size_t n_foreground_max = 3;
  std::size_t n_background_min = 3;
  std::size_t n_background_max = 6;
  double texture_freq_min = 2.0;   // cycles across an object
  double texture_freq_max = 12.0;
  double fg_attenuation_min = 0.8;
  double fg_attenuation_max = 2.0;
  double bg_attenuation_min = 0.2;
  double bg_attenuation_max = 0.9;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SceneMeta {
  std::uint64_t seed = 0;
  std::size_t n_foreground = 0;
  std::size_t n_background = 0;
  std::size_t fg_pixels = 0;
  std::size_t overlap_pixels = 0;  // fg support overlapped by background clutter
};

/// One rendered scene: transmittance image in [0,1] and the binary union
/// mask of the rendered foreground supports.
struct Scene {
  Tensor<float> image;  // [1,H,W]
  Tensor<float> mask;   // [1,H,W], values in {0,1}
  SceneMeta meta;
};

/// Beer-Lambert style compositing: exp(-sum of attenuation layers),
/// elementwise. No layers yields an all-ones image of the given shape.
Tensor<float> composite_transmittance(const std::vector<Tensor<float>>& attenuation_layers,
                                      const Shape& shape);

/// Deterministic per (cfg, seed).
Scene gen_scene(const SceneConfig& cfg, std::uint64_t seed);

/// In-memory batch; scene i uses a child seed derived from (base_seed, i).
std::vector<Scene> gen_scenes(const SceneConfig& cfg, std::size_t count, std::uint64_t base_seed);

struct DatasetManifest {
  std::size_t count = 0;
  SceneConfig config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> image_files;
  std::vector<std::string> mask_files;
};

/// Writes scene_%05d.img.tns / scene_%05d.mask.tns plus manifest.json.
/// FOAM_SEED in the environment overrides cfg.seed.
DatasetManifest gen_dataset(const SceneConfig& cfg, std::size_t count, const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dir);
Scene load_scene(const std::string& dir, const DatasetManifest& manifest, std::size_t index);
std::vector<Scene> load_dataset(const std::string& dir);

/// cfg.seed unless the FOAM_SEED environment variable is set.
std::uint64_t effective_seed(const SceneConfig& cfg);

}  // namespace foam::scenes
