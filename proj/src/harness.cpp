#include "foam/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace foam::harness {

// ---------------------------------------------------------------------------
// Backbone and head
// ---------------------------------------------------------------------------

TinyBackboneParams TinyBackboneParams::init(std::size_t in_channels, std::size_t channels,
                                            std::size_t levels, Rng& rng) {
  TinyBackboneParams p;
  std::size_t cin = in_channels;
  for (std::size_t l = 0; l < levels; ++l) {
    BackboneStage stage;
    stage.conv = nn::Conv2dParams<float>::init(cin, channels, 3, 1, rng, /*with_bias=*/false);
    stage.norm_scale = Tensor<float>::ones({channels}, /*requires_grad=*/true);
    stage.norm_shift = Tensor<float>::zeros({channels}, /*requires_grad=*/true);
    stage.running_mean = Tensor<float>::zeros({channels});
    stage.running_var = Tensor<float>::ones({channels});
    p.stages.push_back(std::move(stage));
    cin = channels;
  }
  return p;
}

void TinyBackboneParams::collect(const std::string& prefix, nn::NamedParams<float>& out) {
  for (std::size_t l = 0; l < stages.size(); ++l) {
    const std::string sp = prefix + ".stage" + std::to_string(l);
    stages[l].conv.collect(sp, out);
    out.emplace_back(sp + ".norm_scale", stages[l].norm_scale);
    out.emplace_back(sp + ".norm_shift", stages[l].norm_shift);
  }
}

void TinyBackboneParams::collect_buffers(const std::string& prefix, nn::NamedParams<float>& out) {
  for (std::size_t l = 0; l < stages.size(); ++l) {
    const std::string sp = prefix + ".stage" + std::to_string(l);
    out.emplace_back(sp + ".running_mean", stages[l].running_mean);
    out.emplace_back(sp + ".running_var", stages[l].running_var);
  }
}

SegHeadParams SegHeadParams::init(std::size_t channels, std::size_t levels, Rng& rng) {
  SegHeadParams p;
  const std::size_t width = channels * levels;
  p.norm_scale = Tensor<float>::ones({width}, /*requires_grad=*/true);
  p.norm_shift = Tensor<float>::zeros({width}, /*requires_grad=*/true);
  p.running_mean = Tensor<float>::zeros({width});
  p.running_var = Tensor<float>::ones({width});
  p.fuse = nn::Conv2dParams<float>::init(width, 1, 1, 1, rng);
  return p;
}

void SegHeadParams::collect(const std::string& prefix, nn::NamedParams<float>& out) {
  out.emplace_back(prefix + ".norm_scale", norm_scale);
  out.emplace_back(prefix + ".norm_shift", norm_shift);
  fuse.collect(prefix + ".fuse", out);
}

void SegHeadParams::collect_buffers(const std::string& prefix, nn::NamedParams<float>& out) {
  out.emplace_back(prefix + ".running_mean", running_mean);
  out.emplace_back(prefix + ".running_var", running_var);
}

std::vector<FTensor> backbone_forward(const FTensor& image, TinyBackboneParams& params,
                                      bool training, bool update_stats) {
  std::vector<FTensor> levels;
  FTensor cur = image;
  for (auto& stage : params.stages) {
    FTensor pre = nn::conv2d(cur, stage.conv);
    FTensor normed = nn::channel_norm(pre, stage.norm_scale, stage.norm_shift,
                                      stage.running_mean, stage.running_var, training,
                                      training && update_stats);
    cur = subsample(relu(normed), 2);
    levels.push_back(cur);
  }
  return levels;
}

FTensor seg_head_forward(const std::vector<FTensor>& levels, SegHeadParams& params,
                         std::size_t full_h, std::size_t full_w, bool training,
                         bool update_stats) {
  std::vector<FTensor> upsampled;
  for (const auto& level : levels) {
    const std::size_t factor = full_h / level.shape()[1];
    if (level.shape()[1] * factor != full_h || level.shape()[2] * factor != full_w) {
      throw ShapeError("seg_head: level extents do not divide the full resolution");
    }
    upsampled.push_back(factor == 1 ? level : upsample_nearest(level, factor));
  }
  FTensor joint = concat0<float>(upsampled);
  FTensor normed = nn::channel_norm(joint, params.norm_scale, params.norm_shift,
                                    params.running_mean, params.running_var, training,
                                    training && update_stats);
  return nn::conv2d(normed, params.fuse);
}

FTensor task_loss(const FTensor& logits, const FTensor& mask) {
  return bce_with_logits(logits, mask);
}

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

std::vector<std::size_t> resolve_level_set(const std::string& spec, std::size_t levels) {
  if (levels == 0) throw ValueError("resolve_level_set: no levels");
  std::vector<std::size_t> out;
  if (spec == "top1") {
    out = {levels};
  } else if (spec == "top2") {
    if (levels >= 2) out = {levels - 1, levels};
    else out = {levels};
  } else if (spec == "all") {
    for (std::size_t l = 1; l <= levels; ++l) out.push_back(l);
  } else {
    std::stringstream ss(spec);
    std::string token;
    while (std::getline(ss, token, ',')) {
      try {
        const long v = std::stol(token);
        if (v < 1 || static_cast<std::size_t>(v) > levels) throw std::out_of_range("level");
        out.push_back(static_cast<std::size_t>(v));
      } catch (const std::exception&) {
        throw ValueError("level set '" + spec + "': expected top1|top2|all or 1-based indices <= " +
                         std::to_string(levels));
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  }
  if (out.empty()) throw ValueError("level set '" + spec + "' is empty");
  return out;
}

void TrainConfig::validate() const {
  if (channels == 0 || channels % 2 != 0) throw ValueError("train config: channels must be even and positive");
  if (levels == 0) throw ValueError("train config: need at least one pyramid level");
  if (fstb_stages == 0) throw ValueError("train config: fstb_stages must be >= 1");
  if (enable_hdc && !enable_fstb) {
    throw ValueError("train config: enable_hdc requires enable_fstb");
  }
  if (batch_size == 0 || steps == 0) throw ValueError("train config: steps and batch size must be positive");
  if (lr <= 0.0) throw ValueError("train config: learning rate must be positive");
  if (optimizer != "sgd" && optimizer != "adam") {
    throw ValueError("train config: optimizer must be sgd or adam");
  }
  corruption.validate();
  scene.validate();
  resolve_level_set(fstb_levels, levels);
  resolve_level_set(hdc_layers, levels);
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "model.channels", "model.levels",
      "fstb.stages", "fstb.levels", "fstb.dilation", "fstb.attention_cap", "fstb.output_gain",
      "train.steps", "train.batch_size", "train.lr", "train.momentum", "train.grad_clip",
      "train.optimizer",
      "train.seed", "train.enable_fstb", "train.enable_hdc", "train.train_scenes",
      "train.eval_scenes",
      "hdc.loss_type", "hdc.lambda", "hdc.layers", "hdc.detach_base", "hdc.same_depth_teacher",
      "hdc.corruption_grads_into_backbone",
      "corruption.kind", "corruption.gb_kernel_size", "corruption.gb_sigma",
      "corruption.du_factor", "corruption.gn_sigma", "corruption.seed",
      "scene.height", "scene.width", "scene.n_foreground_min", "scene.n_foreground_max",
      "scene.n_background_min", "scene.n_background_max", "scene.texture_freq_min",
      "scene.texture_freq_max", "scene.fg_attenuation_min", "scene.fg_attenuation_max",
      "scene.bg_attenuation_min", "scene.bg_attenuation_max", "scene.seed",
  };
  return keys;
}

}  // namespace

TrainConfig TrainConfig::from_config(const Config& cfg) {
  cfg.require_known(known_keys());
  TrainConfig t;
  t.channels = cfg.get_uint("model.channels", t.channels);
  t.levels = cfg.get_uint("model.levels", t.levels);
  t.fstb_stages = cfg.get_uint("fstb.stages", t.fstb_stages);
  t.fstb_levels = cfg.get_string("fstb.levels", t.fstb_levels);
  t.dilation = cfg.get_uint("fstb.dilation", t.dilation);
  t.attention_cap = cfg.get_uint("fstb.attention_cap", t.attention_cap);
  t.fstb_output_gain = cfg.get_double("fstb.output_gain", t.fstb_output_gain);
  t.steps = cfg.get_uint("train.steps", t.steps);
  t.batch_size = cfg.get_uint("train.batch_size", t.batch_size);
  t.lr = cfg.get_double("train.lr", t.lr);
  t.momentum = cfg.get_double("train.momentum", t.momentum);
  t.grad_clip = cfg.get_double("train.grad_clip", t.grad_clip);
  t.optimizer = cfg.get_string("train.optimizer", t.optimizer);
  t.seed = cfg.get_uint("train.seed", t.seed);
  t.enable_fstb = cfg.get_bool("train.enable_fstb", t.enable_fstb);
  t.enable_hdc = cfg.get_bool("train.enable_hdc", t.enable_hdc);
  t.train_scenes = cfg.get_uint("train.train_scenes", t.train_scenes);
  t.eval_scenes = cfg.get_uint("train.eval_scenes", t.eval_scenes);

  const std::string loss_type = cfg.get_string("hdc.loss_type", "I");
  if (loss_type == "I") t.loss.loss_type = hdc::LossType::TypeI;
  else if (loss_type == "II") t.loss.loss_type = hdc::LossType::TypeII;
  else throw ValueError("config key 'hdc.loss_type': expected I or II");
  t.loss.lambda = cfg.get_double("hdc.lambda", t.loss.lambda);
  t.hdc_layers = cfg.get_string("hdc.layers", t.hdc_layers);
  t.loss.detach_base = cfg.get_bool("hdc.detach_base", t.loss.detach_base);
  t.loss.same_depth_teacher = cfg.get_bool("hdc.same_depth_teacher", t.loss.same_depth_teacher);
  t.corruption_grads_into_backbone =
      cfg.get_bool("hdc.corruption_grads_into_backbone", t.corruption_grads_into_backbone);

  const std::string kind = cfg.get_string("corruption.kind", "gb");
  if (kind == "gb") t.corruption.kind = hdc::CorruptionKind::GaussianBlur;
  else if (kind == "du") t.corruption.kind = hdc::CorruptionKind::DownUp;
  else if (kind == "gn") t.corruption.kind = hdc::CorruptionKind::GaussianNoise;
  else throw ValueError("config key 'corruption.kind': expected gb, du, or gn");
  t.corruption.gb_kernel_size = cfg.get_uint("corruption.gb_kernel_size", t.corruption.gb_kernel_size);
  t.corruption.gb_sigma = cfg.get_double("corruption.gb_sigma", t.corruption.gb_sigma);
  t.corruption.du_factor = cfg.get_uint("corruption.du_factor", t.corruption.du_factor);
  t.corruption.gn_sigma = cfg.get_double("corruption.gn_sigma", t.corruption.gn_sigma);
  t.corruption.seed = cfg.get_uint("corruption.seed", t.corruption.seed);

  t.scene.height = cfg.get_uint("scene.height", t.scene.height);
  t.scene.width = cfg.get_uint("scene.width", t.scene.width);
  t.scene.n_foreground_min = cfg.get_uint("scene.n_foreground_min", t.scene.n_foreground_min);
  t.scene.n_foreground_max = cfg.get_uint("scene.n_foreground_max", t.scene.n_foreground_max);
  t.scene.n_background_min = cfg.get_uint("scene.n_background_min", t.scene.n_background_min);
  t.scene.n_background_max = cfg.get_uint("scene.n_background_max", t.scene.n_background_max);
  t.scene.texture_freq_min = cfg.get_double("scene.texture_freq_min", t.scene.texture_freq_min);
  t.scene.texture_freq_max = cfg.get_double("scene.texture_freq_max", t.scene.texture_freq_max);
  t.scene.fg_attenuation_min = cfg.get_double("scene.fg_attenuation_min", t.scene.fg_attenuation_min);
  t.scene.fg_attenuation_max = cfg.get_double("scene.fg_attenuation_max", t.scene.fg_attenuation_max);
  t.scene.bg_attenuation_min = cfg.get_double("scene.bg_attenuation_min", t.scene.bg_attenuation_min);
  t.scene.bg_attenuation_max = cfg.get_double("scene.bg_attenuation_max", t.scene.bg_attenuation_max);
  t.scene.seed = cfg.get_uint("scene.seed", t.scene.seed);

  t.validate();
  return t;
}

Config TrainConfig::to_config() const {
  Config c;
  c.set("model.channels", std::to_string(channels));
  c.set("model.levels", std::to_string(levels));
  c.set("fstb.stages", std::to_string(fstb_stages));
  c.set("fstb.levels", fstb_levels);
  c.set("fstb.dilation", std::to_string(dilation));
  c.set("fstb.attention_cap", std::to_string(attention_cap));
  c.set("fstb.output_gain", std::to_string(fstb_output_gain));
  c.set("train.steps", std::to_string(steps));
  c.set("train.batch_size", std::to_string(batch_size));
  c.set("train.lr", std::to_string(lr));
  c.set("train.momentum", std::to_string(momentum));
  c.set("train.grad_clip", std::to_string(grad_clip));
  c.set("train.optimizer", optimizer);
  c.set("train.seed", std::to_string(seed));
  c.set("train.enable_fstb", enable_fstb ? "true" : "false");
  c.set("train.enable_hdc", enable_hdc ? "true" : "false");
  c.set("train.train_scenes", std::to_string(train_scenes));
  c.set("train.eval_scenes", std::to_string(eval_scenes));
  c.set("hdc.loss_type", loss.loss_type == hdc::LossType::TypeI ? "I" : "II");
  c.set("hdc.lambda", std::to_string(loss.lambda));
  c.set("hdc.layers", hdc_layers);
  c.set("hdc.detach_base", loss.detach_base ? "true" : "false");
  c.set("hdc.same_depth_teacher", loss.same_depth_teacher ? "true" : "false");
  c.set("hdc.corruption_grads_into_backbone", corruption_grads_into_backbone ? "true" : "false");
  switch (corruption.kind) {
    case hdc::CorruptionKind::GaussianBlur: c.set("corruption.kind", "gb"); break;
    case hdc::CorruptionKind::DownUp: c.set("corruption.kind", "du"); break;
    case hdc::CorruptionKind::GaussianNoise: c.set("corruption.kind", "gn"); break;
  }
  c.set("corruption.gb_kernel_size", std::to_string(corruption.gb_kernel_size));
  c.set("corruption.gb_sigma", std::to_string(corruption.gb_sigma));
  c.set("corruption.du_factor", std::to_string(corruption.du_factor));
  c.set("corruption.gn_sigma", std::to_string(corruption.gn_sigma));
  c.set("corruption.seed", std::to_string(corruption.seed));
  c.set("scene.height", std::to_string(scene.height));
  c.set("scene.width", std::to_string(scene.width));
  c.set("scene.n_foreground_min", std::to_string(scene.n_foreground_min));
  c.set("scene.n_foreground_max", std::to_string(scene.n_foreground_max));
  c.set("scene.n_background_min", std::to_string(scene.n_background_min));
  c.set("scene.n_background_max", std::to_string(scene.n_background_max));
  c.set("scene.texture_freq_min", std::to_string(scene.texture_freq_min));
  c.set("scene.texture_freq_max", std::to_string(scene.texture_freq_max));
  c.set("scene.fg_attenuation_min", std::to_string(scene.fg_attenuation_min));
  c.set("scene.fg_attenuation_max", std::to_string(scene.fg_attenuation_max));
  c.set("scene.bg_attenuation_min", std::to_string(scene.bg_attenuation_min));
  c.set("scene.bg_attenuation_max", std::to_string(scene.bg_attenuation_max));
  c.set("scene.seed", std::to_string(scene.seed));
  return c;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model Model::init(const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.channels = cfg.channels;
  m.levels = cfg.levels;
  m.fstb_stages = cfg.enable_fstb ? cfg.fstb_stages : 0;
  m.enable_fstb = cfg.enable_fstb;
  m.fstb_level_set = resolve_level_set(cfg.fstb_levels, cfg.levels);
  m.corruption_grads_into_backbone = cfg.corruption_grads_into_backbone;

  Rng rng(Rng::mix(seed, 0xF0A11));
  m.backbone = TinyBackboneParams::init(1, cfg.channels, cfg.levels, rng);
  if (m.enable_fstb) {
    fstb::FstbConfig fcfg;
    fcfg.channels = cfg.channels;
    fcfg.dilation = cfg.dilation;
    fcfg.attention_cap = cfg.attention_cap;
    fcfg.output_gain = cfg.fstb_output_gain;
    for (std::size_t n = 0; n < cfg.fstb_stages; ++n) {
      m.blocks.push_back(fstb::FstbParams<float>::init(fcfg, rng));
    }
  }
  m.head = SegHeadParams::init(cfg.channels, cfg.levels, rng);
  return m;
}

nn::NamedParams<float> Model::parameters() {
  nn::NamedParams<float> out;
  backbone.collect("backbone", out);
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    blocks[n].collect("fstb" + std::to_string(n), out);
  }
  head.collect("head", out);
  return out;
}

nn::NamedParams<float> Model::state() {
  nn::NamedParams<float> out = parameters();
  backbone.collect_buffers("backbone", out);
  head.collect_buffers("head", out);
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    blocks[n].collect_buffers("fstb" + std::to_string(n), out);
  }
  return out;
}

hdc::FeaturePyramid<float> Model::forward_pyramid(const FTensor& image, bool training,
                                                  bool is_base) {
  hdc::FeaturePyramid<float> pyr;
  std::vector<FTensor> stage0 = backbone_forward(image, backbone, training, training && is_base);
  if (!is_base && !corruption_grads_into_backbone) {
    for (auto& t : stage0) t = t.detach();
  }
  pyr.stages.push_back(stage0);
  const bool update_stats = training && is_base;
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    const auto& prev = pyr.stages.back();
    std::vector<FTensor> next;
    next.reserve(prev.size());
    for (std::size_t l = 0; l < prev.size(); ++l) {
      const bool refine =
          std::find(fstb_level_set.begin(), fstb_level_set.end(), l + 1) != fstb_level_set.end();
      next.push_back(refine ? fstb::fstb_forward(prev[l], blocks[n], training, update_stats)
                            : prev[l]);
    }
    pyr.stages.push_back(std::move(next));
  }
  return pyr;
}

FTensor Model::forward_logits(const hdc::FeaturePyramid<float>& pyramid, std::size_t full_h,
                              std::size_t full_w, bool training) {
  return seg_head_forward(pyramid.stages.back(), head, full_h, full_w, training, training);
}

void Model::save(const std::string& dir) const {
  Model& self = const_cast<Model&>(*this);
  std::map<std::string, std::string> info;
  info["channels"] = std::to_string(channels);
  info["levels"] = std::to_string(levels);
  info["fstb_stages"] = std::to_string(fstb_stages);
  info["enable_fstb"] = enable_fstb ? "true" : "false";
  std::string lvls;
  for (std::size_t l : fstb_level_set) lvls += (lvls.empty() ? "" : ",") + std::to_string(l);
  info["fstb_levels"] = lvls;
  info["dilation"] = blocks.empty() ? "2" : std::to_string(blocks[0].sdca.q3.dilation);
  info["attention_cap"] = blocks.empty() ? "4096" : std::to_string(blocks[0].fdba.attention_cap);
  nn::save_params(dir, self.state(), info);
}

Model Model::load(const std::string& dir) {
  // Read the manifest info first to reconstruct the architecture.
  std::vector<std::pair<std::string, Shape>> shapes;
  std::vector<std::vector<float>> payloads;
  std::map<std::string, std::string> info;
  nn::load_param_dir_f32(dir, shapes, payloads, info);

  TrainConfig cfg;
  cfg.channels = std::stoul(info.at("channels"));
  cfg.levels = std::stoul(info.at("levels"));
  cfg.enable_fstb = info.at("enable_fstb") == "true";
  cfg.fstb_stages = std::max<std::size_t>(1, std::stoul(info.at("fstb_stages")));
  cfg.fstb_levels = info.at("fstb_levels");
  cfg.dilation = std::stoul(info.at("dilation"));
  cfg.attention_cap = std::stoul(info.at("attention_cap"));
  cfg.enable_hdc = false;

  Model m = Model::init(cfg, /*seed=*/0);
  if (!cfg.enable_fstb) m.fstb_stages = 0;
  nn::NamedParams<float> state = m.state();
  nn::load_params(dir, state);
  return m;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

namespace {

struct Optimizer {
  std::string kind;
  double lr, momentum;
  std::vector<std::vector<float>> velocity;  // sgd
  std::vector<std::vector<float>> m1, m2;    // adam
  std::size_t t = 0;

  void init(const std::string& kind_, double lr_, double momentum_,
            const nn::NamedParams<float>& params) {
    kind = kind_;
    lr = lr_;
    momentum = momentum_;
    for (const auto& [name, p] : params) {
      velocity.emplace_back(p.size(), 0.0f);
      m1.emplace_back(p.size(), 0.0f);
      m2.emplace_back(p.size(), 0.0f);
    }
  }

  void step(nn::NamedParams<float>& params) {
    ++t;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k].second;
      if (p.grad().empty()) continue;
      if (kind == "sgd") {
        auto& v = velocity[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
          v[i] = static_cast<float>(momentum) * v[i] + p.grad()[i];
          p.values()[i] -= static_cast<float>(lr) * v[i];
        }
      } else {  // adam
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        auto& m = m1[k];
        auto& v = m2[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double g = p.grad()[i];
          m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
          v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g * g);
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          p.values()[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
        }
      }
    }
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const std::vector<scenes::Scene>& dataset,
                  const std::string& out_dir, Model* trained) {
  cfg.validate();
  if (dataset.empty()) throw ValueError("train: dataset is empty");

  Model model = Model::init(cfg, cfg.seed);
  nn::NamedParams<float> params = model.parameters();

  Optimizer opt;
  opt.init(cfg.optimizer, cfg.lr, cfg.momentum, params);

  hdc::ConsistentLossConfig loss_cfg = cfg.loss;
  loss_cfg.target_layers = resolve_level_set(cfg.hdc_layers, cfg.levels);

  Rng shuffle_rng(Rng::mix(cfg.seed, 0x5101FFE));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  auto reshuffle = [&]() {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(
          shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
  };
  reshuffle();
  std::size_t cursor = 0;

  TrainResult result;
  const std::size_t h = dataset[0].image.shape()[1];
  const std::size_t w = dataset[0].image.shape()[2];

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    FTensor batch_total = FTensor::scalar(0.0f);
    double task_sum = 0.0, consistent_sum = 0.0;
    try {
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        if (cursor >= order.size()) {
          reshuffle();
          cursor = 0;
        }
        const scenes::Scene& scene = dataset[order[cursor++]];
        FTensor sample_loss;
        if (cfg.enable_hdc) {
          hdc::CorruptionConfig ccfg = cfg.corruption;
          // fresh noise draw per (step, sample), reproducible per seed
          ccfg.seed = Rng::mix(Rng::mix(cfg.corruption.seed, step), b);
          auto shared_forward = [&](const FTensor& img, bool is_base) {
            return model.forward_pyramid(img, /*training=*/true, is_base);
          };
          auto res = hdc::hdc_step<float>(scene.image, shared_forward, ccfg, loss_cfg);
          FTensor logits = model.forward_logits(res.base, h, w, /*training=*/true);
          FTensor task = task_loss(logits, scene.mask);
          task_sum += task.item();
          consistent_sum += res.loss.item();
          sample_loss = add(task, res.loss);
        } else {
          auto pyr = model.forward_pyramid(scene.image, /*training=*/true, /*is_base=*/true);
          FTensor logits = model.forward_logits(pyr, h, w, /*training=*/true);
          FTensor task = task_loss(logits, scene.mask);
          task_sum += task.item();
          sample_loss = task;
        }
        batch_total = add(batch_total, sample_loss);
      }
      batch_total = mul_scalar(batch_total, 1.0f / static_cast<float>(cfg.batch_size));
      for (auto& [name, p] : params) p.zero_grad();
      batch_total.backward();
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (auto& [name, p] : params)
          for (float g : p.grad()) sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) {
          const float scale = static_cast<float>(cfg.grad_clip / norm);
          for (auto& [name, p] : params)
            for (float& g : p.grad()) g *= scale;
        }
      }
      opt.step(params);
    } catch (const NumericError& e) {
      throw NumericError("train: non-finite loss at step " + std::to_string(step) + ": " +
                         e.what());
    }

    TraceRow row;
    row.step = step;
    row.task = task_sum / static_cast<double>(cfg.batch_size);
    row.consistent = consistent_sum / static_cast<double>(cfg.batch_size);
    row.total = static_cast<double>(batch_total.item());
    result.trace.push_back(row);
  }

  result.initial_task = result.trace.front().task;
  result.final_task = result.trace.back().task;

  if (!out_dir.empty()) {
    model.save(out_dir);
    write_trace_csv(out_dir + "/trace.csv", result.trace);
    std::ofstream cfg_echo(out_dir + "/train_config.cfg");
    cfg_echo << cfg.to_config().serialize();
  }
  if (trained) *trained = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalReport evaluate(Model& model, const std::vector<scenes::Scene>& dataset) {
  if (dataset.empty()) throw ValueError("evaluate: dataset is empty");
  EvalReport report;
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (const auto& scene : dataset) {
    const std::size_t h = scene.image.shape()[1], w = scene.image.shape()[2];
    auto pyr = model.forward_pyramid(scene.image, /*training=*/false, /*is_base=*/true);
    FTensor logits = model.forward_logits(pyr, h, w);
    double inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const bool pred = logits.values()[i] > 0.0f;  // sigmoid(z) > 0.5
      const bool truth = scene.mask.values()[i] > 0.5f;
      if (pred && truth) {
        inter += 1.0;
        tp += 1.0;
      }
      if (pred || truth) uni += 1.0;
      if (pred && !truth) fp += 1.0;
      if (!pred && truth) fn += 1.0;
    }
    report.per_scene_iou.push_back(uni == 0.0 ? 1.0 : inter / uni);
  }
  report.mean_iou = std::accumulate(report.per_scene_iou.begin(), report.per_scene_iou.end(), 0.0) /
                    static_cast<double>(report.per_scene_iou.size());
  report.precision = (tp + fp) == 0.0 ? 1.0 : tp / (tp + fp);
  report.recall = (tp + fn) == 0.0 ? 1.0 : tp / (tp + fn);
  return report;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

double median(std::vector<double> values) {
  if (values.empty()) throw ValueError("median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

double train_and_eval(TrainConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  scenes::SceneConfig scfg = cfg.scene;
  scfg.seed = Rng::mix(cfg.scene.seed, seed);
  auto train_set = scenes::gen_scenes(scfg, cfg.train_scenes, /*base_seed=*/1);
  auto eval_set = scenes::gen_scenes(scfg, cfg.eval_scenes, /*base_seed=*/0xE7A1);
  Model model;
  train(cfg, train_set, /*out_dir=*/"", &model);
  return evaluate(model, eval_set).mean_iou;
}

}  // namespace

AblationReport run_ablation(const TrainConfig& base, std::size_t n_seeds) {
  if (n_seeds == 0) throw ValueError("run_ablation: need at least one seed");
  AblationReport report;
  report.cells = {{"baseline", {}, 0.0}, {"fstb", {}, 0.0}, {"fstb_hdc", {}, 0.0}};

  for (std::size_t s = 0; s < n_seeds; ++s) {
    const std::uint64_t seed = base.seed + s;

    TrainConfig baseline = base;
    baseline.enable_fstb = false;
    baseline.enable_hdc = false;
    report.cells[0].per_seed_iou.push_back(train_and_eval(baseline, seed));

    TrainConfig with_fstb = base;
    with_fstb.enable_fstb = true;
    with_fstb.enable_hdc = false;
    report.cells[1].per_seed_iou.push_back(train_and_eval(with_fstb, seed));

    TrainConfig with_hdc = base;
    with_hdc.enable_fstb = true;
    with_hdc.enable_hdc = true;
    report.cells[2].per_seed_iou.push_back(train_and_eval(with_hdc, seed));
  }
  for (auto& cell : report.cells) cell.median_iou = median(cell.per_seed_iou);
  report.margin_fstb = report.cells[1].median_iou - report.cells[0].median_iou;
  report.margin_hdc = report.cells[2].median_iou - report.cells[1].median_iou;
  report.ordering_holds = report.margin_fstb > 0.0 && report.margin_hdc > 0.0;
  return report;
}

std::vector<LayerGridCell> run_layer_grid(const TrainConfig& base, std::size_t n_seeds,
                                          const std::vector<std::string>& layer_sets) {
  std::vector<LayerGridCell> cells;
  for (const auto& layer_set : layer_sets) {
    LayerGridCell cell;
    cell.layer_set = layer_set;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      TrainConfig cfg = base;
      cfg.enable_fstb = true;
      cfg.enable_hdc = true;
      cfg.hdc_layers = layer_set;
      cell.per_seed_iou.push_back(train_and_eval(cfg, base.seed + s));
    }
    cell.median_iou = median(cell.per_seed_iou);
    cells.push_back(std::move(cell));
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Trace CSV
// ---------------------------------------------------------------------------

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write trace: " + path);
  os << "step,task_loss,consistent_loss,total\n";
  os.precision(17);
  for (const auto& row : trace) {
    os << row.step << "," << row.task << "," << row.consistent << "," << row.total << "\n";
  }
}

std::vector<TraceRow> read_trace_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read trace: " + path);
  std::vector<TraceRow> rows;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    TraceRow row;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    row.step = std::stoul(field);
    std::getline(ss, field, ',');
    row.task = std::stod(field);
    std::getline(ss, field, ',');
    row.consistent = std::stod(field);
    std::getline(ss, field, ',');
    row.total = std::stod(field);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace foam::harness
