#include "foam/engine.hpp"

#include <filesystem>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "foam/harness.hpp"
#include "foam/image_io.hpp"

namespace foam::engine {

namespace {

using nlohmann::json;

json band_report_json(const spectral::BandEnergyReport& report) {
  return {{"edges", report.edges},
          {"fractions", report.fractions},
          {"total_energy", report.total_energy}};
}

void write_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write: " + path);
  os << j.dump(2) << "\n";
}

hdc::CorruptionConfig corruption_by_kind(const std::string& kind, std::uint64_t seed) {
  hdc::CorruptionConfig cfg;
  cfg.seed = seed;
  if (kind == "gb") {
    cfg.kind = hdc::CorruptionKind::GaussianBlur;
  } else if (kind == "du") {
    cfg.kind = hdc::CorruptionKind::DownUp;
  } else if (kind == "gn") {
    cfg.kind = hdc::CorruptionKind::GaussianNoise;
  } else {
    throw ValueError("corruption kind must be gb, du, or gn; got '" + kind + "'");
  }
  return cfg;
}

Tensor<float> load_image_chw(const std::string& path) {
  Tensor<float> t = load_tensor<float>(path);
  if (t.rank() == 2) {
    return reshape(t, {1, t.shape()[0], t.shape()[1]});
  }
  if (t.rank() != 3) {
    throw ValueError("expected a [C,H,W] or [H,W] tensor in " + path + ", got " +
                     shape_str(t.shape()));
  }
  return t;
}

// Spatial image, fftshifted log-magnitude and phase spectra, band report.
json emit_spectrum_set(const Tensor<float>& image, const std::string& out_dir,
                       const std::string& tag) {
  const std::size_t h = image.shape()[1], w = image.shape()[2];
  const std::size_t plane = h * w;

  std::vector<float> first_channel(image.values().begin(),
                                   image.values().begin() + static_cast<std::ptrdiff_t>(plane));
  write_pgm(out_dir + "/" + tag + ".pgm", pgm_from_unit(first_channel), h, w);

  auto spec = spectral::fft2(image);
  auto shifted = spectral::fftshift(spec);
  Tensor<float> mag = spectral::magnitude(shifted);
  Tensor<float> ph = spectral::phase(shifted);
  std::vector<float> mag0(mag.values().begin(),
                          mag.values().begin() + static_cast<std::ptrdiff_t>(plane));
  std::vector<float> ph0(ph.values().begin(),
                         ph.values().begin() + static_cast<std::ptrdiff_t>(plane));
  write_pgm(out_dir + "/" + tag + "_magnitude.pgm", pgm_from_log_magnitude(mag0), h, w);
  write_pgm(out_dir + "/" + tag + "_phase.pgm", pgm_from_phase(ph0), h, w);

  auto report = spectral::band_energy(spec, spectral::default_band_edges());
  write_json(out_dir + "/" + tag + "_bands.json", band_report_json(report));
  return band_report_json(report);
}

}  // namespace

std::string run_spectrum(const std::string& input_path, const std::string& corrupt_kind,
                         const std::string& out_dir, std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  Tensor<float> image;
  std::string source;
  if (input_path.empty()) {
    scenes::SceneConfig cfg;
    cfg.seed = seed;
    image = scenes::gen_scene(cfg, seed).image;
    source = "demo";
  } else {
    image = load_image_chw(input_path);
    source = input_path;
  }

  json summary;
  summary["input"] = source;
  summary["seed"] = seed;
  summary["original"] = emit_spectrum_set(image, out_dir, "original");

  if (!corrupt_kind.empty()) {
    auto ccfg = corruption_by_kind(corrupt_kind, seed);
    Tensor<float> corrupted = hdc::corrupt(image, ccfg);
    summary["corruption"] = corrupt_kind;
    summary["corrupted"] = emit_spectrum_set(corrupted, out_dir, "corrupted");
  }
  return summary.dump(2);
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

namespace {

struct ComponentCheck {
  std::string name;
  GradReport report;
};

ComponentCheck check_component(const std::string& name) {
  constexpr double kTol = 1e-3;
  const std::uint64_t seed = 20240915;
  Rng rng(seed);
  fstb::FstbConfig cfg;
  cfg.channels = 4;
  cfg.dilation = 2;

  TensorD x = TensorD::uniform({4, 8, 8}, -1.0, 1.0, rng);
  nn::NamedParams<double> params;
  std::function<TensorD()> f;

  auto weighted = [](const TensorD& out, std::uint64_t wseed) {
    Rng wrng(wseed);
    TensorD w = TensorD::uniform(out.shape(), -1.0, 1.0, wrng);
    return sum(mul(out, w));
  };

  if (name == "conv") {
    auto conv = std::make_shared<nn::Conv2dParams<double>>(
        nn::Conv2dParams<double>::init(4, 4, 3, 1, rng));
    conv->collect("conv", params);
    f = [conv, x, weighted]() { return weighted(nn::conv2d(x, *conv), 1); };
  } else if (name == "ddconv") {
    auto dd = std::make_shared<nn::DDConvParams<double>>(
        nn::DDConvParams<double>::init(4, 2, 3, 2, rng));
    dd->collect("ddconv", params);
    f = [dd, x, weighted]() { return weighted(nn::dd_conv(x, *dd), 2); };
  } else if (name == "sigma") {
    auto sp = std::make_shared<nn::SigmaParams<double>>(nn::SigmaParams<double>::init(4, rng));
    sp->collect("sigma", params);
    f = [sp, x, weighted]() {
      auto out = nn::sigma_block(spectral::fft2(x), *sp, /*training=*/true, /*update_stats=*/false);
      return add(weighted(out.re, 3), weighted(out.im, 4));
    };
  } else if (name == "sdca") {
    auto sp = std::make_shared<fstb::SdcaParams<double>>(fstb::SdcaParams<double>::init(cfg, rng));
    sp->collect("sdca", params);
    f = [sp, x, weighted]() { return weighted(fstb::sdca_forward(x, *sp), 5); };
  } else if (name == "fdba") {
    auto fp = std::make_shared<fstb::FdbaParams<double>>(fstb::FdbaParams<double>::init(cfg, rng));
    fp->collect("fdba", params);
    f = [fp, x, weighted]() {
      return weighted(fstb::fdba_forward(x, *fp, /*training=*/true, /*update_stats=*/false), 6);
    };
  } else if (name == "fsfn") {
    auto fp = std::make_shared<fstb::FsfnParams<double>>(fstb::FsfnParams<double>::init(cfg, rng));
    fp->collect("fsfn", params);
    f = [fp, x, weighted]() {
      return weighted(fstb::fsfn_forward(x, *fp, /*training=*/true, /*update_stats=*/false), 7);
    };
  } else if (name == "fstb") {
    auto fp = std::make_shared<fstb::FstbParams<double>>(fstb::FstbParams<double>::init(cfg, rng));
    fp->collect("fstb", params);
    f = [fp, x, weighted]() {
      return weighted(fstb::fstb_forward(x, *fp, /*training=*/true, /*update_stats=*/false), 8);
    };
  } else if (name == "loss1" || name == "loss2") {
    auto f_o = std::make_shared<hdc::FeaturePyramid<double>>();
    auto f_c = std::make_shared<hdc::FeaturePyramid<double>>();
    Rng prng(seed ^ 0xBEEF);
    for (int s = 0; s < 2; ++s) {
      f_o->stages.push_back({TensorD::uniform({4, 8, 8}, -1.0, 1.0, prng)});
      f_c->stages.push_back({TensorD::uniform({4, 8, 8}, -1.0, 1.0, prng, /*rg=*/true)});
    }
    params.emplace_back("student_stage1", f_c->stages[1][0]);
    auto lcfg = std::make_shared<hdc::ConsistentLossConfig>();
    lcfg->target_layers = {1};
    lcfg->loss_type = name == "loss1" ? hdc::LossType::TypeI : hdc::LossType::TypeII;
    f = [f_o, f_c, lcfg]() { return hdc::consistent_loss(*f_o, *f_c, *lcfg); };
  } else {
    throw ValueError("unknown gradcheck component '" + name +
                     "' (want conv|ddconv|sigma|sdca|fdba|fsfn|fstb|loss1|loss2|all)");
  }

  nn::jitter(params, seed ^ 0xA11CE);
  ComponentCheck result;
  result.name = name;
  result.report = gradcheck<double>(f, params, kTol);
  return result;
}

}  // namespace

std::string run_gradcheck(const std::string& component, double tol) {
  if (tol <= 0.0) throw ValueError("gradcheck: tolerance must be positive");
  std::vector<std::string> names;
  if (component == "all") {
    names = {"conv", "ddconv", "sigma", "sdca", "fdba", "fsfn", "fstb", "loss1", "loss2"};
  } else {
    names = {component};
  }
  json summary;
  summary["tolerance"] = tol;
  auto& comps = summary["components"] = json::array();
  bool all_pass = true;
  for (const auto& name : names) {
    ComponentCheck check = check_component(name);
    const bool pass = check.report.max_rel_err < tol;
    all_pass = all_pass && pass;
    const ParamGradCheck* worst = check.report.worst();
    comps.push_back({{"name", name},
                     {"pass", pass},
                     {"max_rel_err", check.report.max_rel_err},
                     {"worst_param", worst ? worst->name : ""},
                     {"worst_index", worst ? worst->worst_index : 0}});
  }
  summary["pass"] = all_pass;
  return summary.dump(2);
}

bool gradcheck_summary_pass(const std::string& report_json) {
  return json::parse(report_json).at("pass").get<bool>();
}

// ---------------------------------------------------------------------------
// data / train / eval / ablate
// ---------------------------------------------------------------------------

namespace {

harness::TrainConfig load_train_config(const std::string& config_path) {
  if (config_path.empty()) {
    harness::TrainConfig cfg;
    cfg.validate();
    return cfg;
  }
  return harness::TrainConfig::from_config(Config::parse_file(config_path));
}

}  // namespace

std::string run_gen_data(const std::string& config_path, std::size_t count,
                         const std::string& out_dir, std::int64_t seed_override) {
  harness::TrainConfig cfg = load_train_config(config_path);
  if (seed_override >= 0) cfg.scene.seed = static_cast<std::uint64_t>(seed_override);
  auto manifest = scenes::gen_dataset(cfg.scene, count, out_dir);
  json summary;
  summary["count"] = manifest.count;
  summary["out_dir"] = out_dir;
  summary["seed"] = manifest.config.seed;
  summary["height"] = manifest.config.height;
  summary["width"] = manifest.config.width;
  return summary.dump(2);
}

std::string run_train(const std::string& config_path, const std::string& data_dir,
                      const std::string& out_dir, std::int64_t seed_override) {
  harness::TrainConfig cfg = load_train_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  auto dataset = scenes::load_dataset(data_dir);
  std::filesystem::create_directories(out_dir);
  auto result = harness::train(cfg, dataset, out_dir);
  json summary;
  summary["steps"] = cfg.steps;
  summary["scenes"] = dataset.size();
  summary["initial_task_loss"] = result.initial_task;
  summary["final_task_loss"] = result.final_task;
  summary["final_total_loss"] = result.trace.back().total;
  summary["checkpoint"] = out_dir;
  summary["trace"] = out_dir + "/trace.csv";
  return summary.dump(2);
}

std::string run_eval(const std::string& ckpt_dir, const std::string& data_dir) {
  harness::Model model = harness::Model::load(ckpt_dir);
  auto dataset = scenes::load_dataset(data_dir);
  auto report = harness::evaluate(model, dataset);
  json j;
  j["mean_iou"] = report.mean_iou;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["per_scene_iou"] = report.per_scene_iou;
  return j.dump(2);
}

namespace {

json ablation_to_json(const harness::AblationReport& report) {
  json j;
  auto& cells = j["cells"] = json::array();
  for (const auto& cell : report.cells) {
    cells.push_back({{"name", cell.name},
                     {"per_seed_iou", cell.per_seed_iou},
                     {"median_iou", cell.median_iou}});
  }
  j["margin_fstb"] = report.margin_fstb;
  j["margin_hdc"] = report.margin_hdc;
  j["ordering_holds"] = report.ordering_holds;
  return j;
}

std::string ablation_to_text(const harness::AblationReport& report) {
  std::ostringstream os;
  os << "variant      median IoU  per-seed\n";
  for (const auto& cell : report.cells) {
    os << cell.name;
    for (std::size_t i = cell.name.size(); i < 13; ++i) os << ' ';
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", cell.median_iou);
    os << buf << "      ";
    for (double v : cell.per_seed_iou) {
      std::snprintf(buf, sizeof(buf), "%.4f ", v);
      os << buf;
    }
    os << "\n";
  }
  os << "margin fstb-baseline: " << report.margin_fstb << "\n";
  os << "margin hdc-fstb:      " << report.margin_hdc << "\n";
  os << "ordering holds:       " << (report.ordering_holds ? "yes" : "no") << "\n";
  return os.str();
}

}  // namespace

std::string run_ablate(const std::string& config_path, std::size_t seeds,
                       const std::string& out_dir, bool layer_grid) {
  harness::TrainConfig cfg = load_train_config(config_path);
  std::filesystem::create_directories(out_dir);

  auto report = harness::run_ablation(cfg, seeds);
  json j = ablation_to_json(report);
  j["seeds"] = seeds;

  if (layer_grid) {
    auto grid = harness::run_layer_grid(cfg, seeds, {"top1", "top2", "all"});
    auto& cells = j["layer_grid"] = json::array();
    for (const auto& cell : grid) {
      cells.push_back({{"layer_set", cell.layer_set},
                       {"per_seed_iou", cell.per_seed_iou},
                       {"median_iou", cell.median_iou}});
    }
    write_json(out_dir + "/layer_grid.json", j["layer_grid"]);
  }

  write_json(out_dir + "/ablation.json", j);
  std::ofstream txt(out_dir + "/ablation.txt");
  txt << ablation_to_text(report);
  return j.dump(2);
}

std::string run_dump_features(const std::string& ckpt_dir, const std::string& input_path,
                              std::size_t stage, std::size_t level,
                              const std::string& corrupt_kind, const std::string& out_dir) {
  harness::Model model = harness::Model::load(ckpt_dir);
  Tensor<float> image = load_image_chw(input_path);
  std::filesystem::create_directories(out_dir);

  auto dump_branch = [&](const Tensor<float>& img, const std::string& tag) {
    auto pyramid = model.forward_pyramid(img, /*training=*/false, /*is_base=*/true);
    if (stage >= pyramid.num_stages()) {
      throw ValueError("stage " + std::to_string(stage) + " out of range 0.." +
                       std::to_string(pyramid.num_stages() - 1));
    }
    if (level < 1 || level > pyramid.num_levels()) {
      throw ValueError("level " + std::to_string(level) + " out of range 1.." +
                       std::to_string(pyramid.num_levels()));
    }
    const Tensor<float>& feat = pyramid.stages[stage][level - 1];
    const std::string base =
        tag + "_stage" + std::to_string(stage) + "_level" + std::to_string(level);
    save_tensor(out_dir + "/" + base + ".tns", feat);

    const std::size_t c = feat.shape()[0], h = feat.shape()[1], w = feat.shape()[2];
    json files = json::array();
    files.push_back(base + ".tns");
    for (std::size_t ch = 0; ch < c; ++ch) {
      // per-channel min-max normalization for display
      const float* plane = feat.values().data() + ch * h * w;
      float lo = plane[0], hi = plane[0];
      for (std::size_t i = 0; i < h * w; ++i) {
        lo = std::min(lo, plane[i]);
        hi = std::max(hi, plane[i]);
      }
      const float span = hi - lo > 0 ? hi - lo : 1.0f;
      std::vector<float> unit(h * w);
      for (std::size_t i = 0; i < h * w; ++i) unit[i] = (plane[i] - lo) / span;
      char name[64];
      std::snprintf(name, sizeof(name), "%s_c%02zu.pgm", base.c_str(), ch);
      write_pgm(out_dir + "/" + name, pgm_from_unit(unit), h, w);
      files.push_back(name);
    }
    return files;
  };

  json summary;
  summary["checkpoint"] = ckpt_dir;
  summary["input"] = input_path;
  summary["stage"] = stage;
  summary["level"] = level;
  summary["base_files"] = dump_branch(image, "base");
  if (!corrupt_kind.empty()) {
    auto ccfg = corruption_by_kind(corrupt_kind, /*seed=*/0);
    summary["corrupt_files"] = dump_branch(hdc::corrupt(image, ccfg), "corrupt");
  }
  return summary.dump(2);
}

}  // namespace foam::engine
