#include "foam/scenes.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

namespace foam::scenes {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

struct Buffer {
  std::size_t h, w;
  std::vector<double> v;
  Buffer(std::size_t h_, std::size_t w_) : h(h_), w(w_), v(h_ * w_, 0.0) {}
  double& at(std::size_t i, std::size_t j) { return v[i * w + j]; }
};

// Striped attenuation texture evaluated at a pixel, in [0.1, 1] * amplitude.
double stripe_texture(double x, double y, double freq, double angle, double phase,
                      double scale_px) {
  const double t = x * std::cos(angle) + y * std::sin(angle);
  const double s = std::sin(2.0 * std::numbers::pi * freq * t / scale_px + phase);
  return 0.55 + 0.45 * s;
}

struct RotatedFrame {
  double cx, cy, cosr, sinr;
  void local(double px, double py, double& lx, double& ly) const {
    const double dx = px - cx, dy = py - cy;
    lx = dx * cosr + dy * sinr;
    ly = -dx * sinr + dy * cosr;
  }
};

// Rasterizes one textured foreground object into the attenuation buffer and
// its support into the mask buffer.
void draw_foreground(Buffer& atten, Buffer& mask, Rng& rng, const SceneConfig& cfg) {
  const double hh = static_cast<double>(cfg.height), ww = static_cast<double>(cfg.width);
  const double size = rng.uniform(hh / 10.0, hh / 4.0);
  RotatedFrame frame;
  frame.cx = rng.uniform(size, ww - size);
  frame.cy = rng.uniform(size, hh - size);
  const double rot = rng.uniform(0.0, std::numbers::pi);
  frame.cosr = std::cos(rot);
  frame.sinr = std::sin(rot);

  const int kind = static_cast<int>(rng.uniform_int(0, 2));  // ellipse, rect, L-shape
  const double a = size, b = size * rng.uniform(0.35, 0.8);
  const double amp = rng.uniform(cfg.fg_attenuation_min, cfg.fg_attenuation_max);
  const double freq = rng.uniform(cfg.texture_freq_min, cfg.texture_freq_max);
  const double tex_angle = rng.uniform(0.0, std::numbers::pi);
  const double tex_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  for (std::size_t i = 0; i < cfg.height; ++i) {
    for (std::size_t j = 0; j < cfg.width; ++j) {
      double lx, ly;
      frame.local(static_cast<double>(j), static_cast<double>(i), lx, ly);
      bool inside = false;
      switch (kind) {
        case 0:
          inside = (lx * lx) / (a * a) + (ly * ly) / (b * b) <= 1.0;
          break;
        case 1:
          inside = std::abs(lx) <= a && std::abs(ly) <= b;
          break;
        default: {  // L-shaped polyomino: two bars sharing a corner
          const double bar = std::max(2.0, b * 0.6);
          inside = (std::abs(lx) <= a && std::abs(ly + b - bar) <= bar) ||
                   (std::abs(lx + a - bar) <= bar && std::abs(ly) <= b);
          break;
        }
      }
      if (!inside) continue;
      mask.at(i, j) = 1.0;
      atten.at(i, j) += amp * stripe_texture(static_cast<double>(j), static_cast<double>(i),
                                             freq, tex_angle, tex_phase, 2.0 * size);
    }
  }
}

// One background clutter element: a soft blob or a thin high-frequency wire.
// Marks its support (used only for the overlap statistic).
void draw_background(Buffer& atten, Buffer& support, Rng& rng, const SceneConfig& cfg) {
  const double hh = static_cast<double>(cfg.height), ww = static_cast<double>(cfg.width);
  const double amp = rng.uniform(cfg.bg_attenuation_min, cfg.bg_attenuation_max);
  if (rng.uniform(0.0, 1.0) < 0.55) {
    // gaussian blob
    const double cx = rng.uniform(0.0, ww), cy = rng.uniform(0.0, hh);
    const double s = rng.uniform(hh / 16.0, hh / 5.0);
    for (std::size_t i = 0; i < cfg.height; ++i)
      for (std::size_t j = 0; j < cfg.width; ++j) {
        const double dx = static_cast<double>(j) - cx, dy = static_cast<double>(i) - cy;
        const double val = amp * std::exp(-0.5 * (dx * dx + dy * dy) / (s * s));
        atten.at(i, j) += val;
        if (val > 0.02) support.at(i, j) = 1.0;
      }
  } else {
    // thin wire: distance to a line through a random point
    const double cx = rng.uniform(0.0, ww), cy = rng.uniform(0.0, hh);
    const double ang = rng.uniform(0.0, std::numbers::pi);
    const double nx = -std::sin(ang), ny = std::cos(ang);
    const double thickness = rng.uniform(0.6, 1.6);
    for (std::size_t i = 0; i < cfg.height; ++i)
      for (std::size_t j = 0; j < cfg.width; ++j) {
        const double d = std::abs((static_cast<double>(j) - cx) * nx +
                                  (static_cast<double>(i) - cy) * ny);
        if (d <= thickness) {
          atten.at(i, j) += amp;
          support.at(i, j) = 1.0;
        }
      }
  }
}

// Slowly varying gradient field over the whole frame.
void draw_gradient_field(Buffer& atten, Buffer& support, Rng& rng, const SceneConfig& cfg) {
  const double hh = static_cast<double>(cfg.height), ww = static_cast<double>(cfg.width);
  const double amp = 0.25 * rng.uniform(cfg.bg_attenuation_min, cfg.bg_attenuation_max);
  const double fx = rng.uniform(0.3, 1.0), fy = rng.uniform(0.3, 1.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < cfg.height; ++i)
    for (std::size_t j = 0; j < cfg.width; ++j) {
      const double val = amp * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi *
                                                         (fx * static_cast<double>(j) / ww +
                                                          fy * static_cast<double>(i) / hh) +
                                                     phase));
      atten.at(i, j) += val;
      if (val > 0.02) support.at(i, j) = 1.0;
    }
}

std::string scene_basename(std::size_t index, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "scene_%05zu.%s.tns", index, suffix);
  return buf;
}

nlohmann::json config_to_json(const SceneConfig& c) {
  return {
      {"height", c.height},
      {"width", c.width},
      {"n_foreground_min", c.n_foreground_min},
      {"n_foreground_max", c.n_foreground_max},
      {"n_background_min", c.n_background_min},
      {"n_background_max", c.n_background_max},
      {"texture_freq_min", c.texture_freq_min},
      {"texture_freq_max", c.texture_freq_max},
      {"fg_attenuation_min", c.fg_attenuation_min},
      {"fg_attenuation_max", c.fg_attenuation_max},
      {"bg_attenuation_min", c.bg_attenuation_min},
      {"bg_attenuation_max", c.bg_attenuation_max},
      {"seed", c.seed},
  };
}

SceneConfig config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.height = j.at("height").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.n_foreground_min = j.at("n_foreground_min").get<std::size_t>();
  c.n_foreground_max = j.at("n_foreground_max").get<std::size_t>();
  c.n_background_min = j.at("n_background_min").get<std::size_t>();
  c.n_background_max = j.at("n_background_max").get<std::size_t>();
  c.texture_freq_min = j.at("texture_freq_min").get<double>();
  c.texture_freq_max = j.at("texture_freq_max").get<double>();
  c.fg_attenuation_min = j.at("fg_attenuation_min").get<double>();
  c.fg_attenuation_max = j.at("fg_attenuation_max").get<double>();
  c.bg_attenuation_min = j.at("bg_attenuation_min").get<double>();
  c.bg_attenuation_max = j.at("bg_attenuation_max").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void SceneConfig::validate() const {
  if (height < 32 || width < 32 || !is_pow2(height) || !is_pow2(width)) {
    throw ValueError("scene config: height/width must be powers of two >= 32");
  }
  if (n_foreground_min > n_foreground_max || n_background_min > n_background_max) {
    throw ValueError("scene config: empty count range");
  }
  if (texture_freq_min <= 0.0 || texture_freq_min > texture_freq_max) {
    throw ValueError("scene config: bad texture frequency range");
  }
  if (fg_attenuation_min <= 0.0 || fg_attenuation_min > fg_attenuation_max ||
      bg_attenuation_min <= 0.0 || bg_attenuation_min > bg_attenuation_max) {
    throw ValueError("scene config: attenuation ranges must be positive and ordered");
  }
}

Tensor<float> composite_transmittance(const std::vector<Tensor<float>>& attenuation_layers,
                                      const Shape& shape) {
  std::vector<double> total(numel(shape), 0.0);
  for (const auto& layer : attenuation_layers) {
    if (layer.shape() != shape) {
      throw ShapeError("composite_transmittance: layer shapes differ");
    }
    for (std::size_t i = 0; i < total.size(); ++i)
      total[i] += static_cast<double>(layer.values()[i]);
  }
  std::vector<float> out(total.size());
  for (std::size_t i = 0; i < total.size(); ++i) out[i] = static_cast<float>(std::exp(-total[i]));
  return Tensor<float>::from_data(shape, std::move(out));
}

Scene gen_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::mix(cfg.seed, seed));

  Buffer fg_atten(cfg.height, cfg.width), bg_atten(cfg.height, cfg.width);
  Buffer mask(cfg.height, cfg.width), bg_support(cfg.height, cfg.width);

  const std::size_t n_fg = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(cfg.n_foreground_min), static_cast<std::int64_t>(cfg.n_foreground_max)));
  const std::size_t n_bg = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(cfg.n_background_min), static_cast<std::int64_t>(cfg.n_background_max)));

  draw_gradient_field(bg_atten, bg_support, rng, cfg);
  for (std::size_t k = 0; k < n_bg; ++k) draw_background(bg_atten, bg_support, rng, cfg);
  for (std::size_t k = 0; k < n_fg; ++k) draw_foreground(fg_atten, mask, rng, cfg);

  Scene scene;
  const std::size_t n = cfg.height * cfg.width;
  std::vector<float> image(n), mvals(n);
  for (std::size_t i = 0; i < n; ++i) {
    image[i] = static_cast<float>(std::exp(-(fg_atten.v[i] + bg_atten.v[i])));
    mvals[i] = mask.v[i] > 0.0 ? 1.0f : 0.0f;
    if (mask.v[i] > 0.0) {
      ++scene.meta.fg_pixels;
      if (bg_support.v[i] > 0.0) ++scene.meta.overlap_pixels;
    }
  }
  scene.image = Tensor<float>::from_data({1, cfg.height, cfg.width}, std::move(image));
  scene.mask = Tensor<float>::from_data({1, cfg.height, cfg.width}, std::move(mvals));
  scene.meta.seed = seed;
  scene.meta.n_foreground = n_fg;
  scene.meta.n_background = n_bg;
  return scene;
}

std::vector<Scene> gen_scenes(const SceneConfig& cfg, std::size_t count, std::uint64_t base_seed) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_scene(cfg, Rng::mix(base_seed, i)));
  return out;
}

std::uint64_t effective_seed(const SceneConfig& cfg) {
  if (const char* env = std::getenv("FOAM_SEED")) {
    return static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));
  }
  return cfg.seed;
}

DatasetManifest gen_dataset(const SceneConfig& cfg, std::size_t count, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const std::uint64_t base = effective_seed(cfg);

  DatasetManifest manifest;
  manifest.count = count;
  manifest.config = cfg;
  manifest.config.seed = base;

  nlohmann::json j;
  j["format"] = "foam-dataset-v1";
  j["count"] = count;
  j["config"] = config_to_json(manifest.config);
  auto& entries = j["scenes"] = nlohmann::json::array();

  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t scene_seed = Rng::mix(base, i);
    SceneConfig scfg = manifest.config;
    Scene scene = gen_scene(scfg, scene_seed);
    const std::string img = scene_basename(i, "img");
    const std::string msk = scene_basename(i, "mask");
    save_tensor(out_dir + "/" + img, scene.image);
    save_tensor(out_dir + "/" + msk, scene.mask);
    manifest.seeds.push_back(scene_seed);
    manifest.image_files.push_back(img);
    manifest.mask_files.push_back(msk);
    entries.push_back({{"index", i}, {"seed", scene_seed}, {"image", img}, {"mask", msk}});
  }
  std::ofstream os(out_dir + "/manifest.json");
  if (!os) throw IoError("cannot write dataset manifest in " + out_dir);
  os << j.dump(2) << "\n";
  return manifest;
}

DatasetManifest load_manifest(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw IoError("cannot read dataset manifest in " + dir);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset manifest in " + dir + ": " + e.what());
  }
  if (j.value("format", "") != "foam-dataset-v1") {
    throw IoError("unrecognized dataset manifest format in " + dir);
  }
  DatasetManifest m;
  m.count = j.at("count").get<std::size_t>();
  m.config = config_from_json(j.at("config"));
  for (const auto& e : j.at("scenes")) {
    m.seeds.push_back(e.at("seed").get<std::uint64_t>());
    m.image_files.push_back(e.at("image").get<std::string>());
    m.mask_files.push_back(e.at("mask").get<std::string>());
  }
  if (m.seeds.size() != m.count) throw IoError("dataset manifest count mismatch in " + dir);
  return m;
}

Scene load_scene(const std::string& dir, const DatasetManifest& manifest, std::size_t index) {
  if (index >= manifest.count) throw ValueError("load_scene: index out of range");
  Scene s;
  s.image = load_tensor<float>(dir + "/" + manifest.image_files[index]);
  s.mask = load_tensor<float>(dir + "/" + manifest.mask_files[index]);
  s.meta.seed = manifest.seeds[index];
  return s;
}

std::vector<Scene> load_dataset(const std::string& dir) {
  const DatasetManifest manifest = load_manifest(dir);
  std::vector<Scene> scenes;
  scenes.reserve(manifest.count);
  for (std::size_t i = 0; i < manifest.count; ++i) scenes.push_back(load_scene(dir, manifest, i));
  return scenes;
}

}  // namespace foam::scenes
