#include "foam/foam_c.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "foam/engine.hpp"
#include "foam/hdc.hpp"
#include "foam/spectral.hpp"
#include "foam/tensor.hpp"

struct foam_tensor {
  foam::Shape shape;
  std::vector<float> data;
};

namespace {

thread_local std::string g_last_error;

constexpr const char* kVersion = "0.1.0";

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename F>
foam_status guarded(F&& fn) {
  try {
    return fn();
  } catch (const foam::ValueError& e) {
    g_last_error = e.what();
    return FOAM_ERR_USAGE;
  } catch (const foam::ShapeError& e) {
    g_last_error = e.what();
    return FOAM_ERR_USAGE;
  } catch (const foam::NumericError& e) {
    g_last_error = e.what();
    return FOAM_ERR_NUMERIC;
  } catch (const foam::IoError& e) {
    g_last_error = e.what();
    return FOAM_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FOAM_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return FOAM_ERR_INTERNAL;
  }
}

foam_status require(bool cond, const char* msg) {
  if (!cond) {
    g_last_error = msg;
    return FOAM_ERR_USAGE;
  }
  return FOAM_OK;
}

}  // namespace

extern "C" {

const char* foam_version(void) { return kVersion; }

const char* foam_last_error(void) { return g_last_error.c_str(); }

void foam_string_free(char* s) { std::free(s); }

foam_status foam_tensor_create(const uint32_t* extents, uint32_t rank, const float* data,
                               foam_tensor** out) {
  if (auto st = require(out && (extents || rank == 0), "tensor_create: null argument")) return st;
  return guarded([&]() {
    auto* t = new foam_tensor;
    t->shape.assign(extents, extents + rank);
    const std::size_t n = foam::numel(t->shape);
    if (data) {
      t->data.assign(data, data + n);
    } else {
      t->data.assign(n, 0.0f);
    }
    *out = t;
    return FOAM_OK;
  });
}

foam_status foam_tensor_load(const char* path, foam_tensor** out) {
  if (auto st = require(path && out, "tensor_load: null argument")) return st;
  return guarded([&]() {
    auto* t = new foam_tensor;
    foam::load_tensor_f32(path, t->shape, t->data);
    *out = t;
    return FOAM_OK;
  });
}

foam_status foam_tensor_save(const foam_tensor* t, const char* path) {
  if (auto st = require(t && path, "tensor_save: null argument")) return st;
  return guarded([&]() {
    foam::save_tensor_f32(path, t->shape, t->data);
    return FOAM_OK;
  });
}

uint32_t foam_tensor_rank(const foam_tensor* t) {
  return t ? static_cast<uint32_t>(t->shape.size()) : 0;
}

foam_status foam_tensor_extents(const foam_tensor* t, uint32_t* extents_out, uint32_t capacity) {
  if (auto st = require(t && extents_out, "tensor_extents: null argument")) return st;
  if (auto st = require(capacity >= t->shape.size(), "tensor_extents: capacity too small"))
    return st;
  for (std::size_t i = 0; i < t->shape.size(); ++i)
    extents_out[i] = static_cast<uint32_t>(t->shape[i]);
  return FOAM_OK;
}

const float* foam_tensor_data(const foam_tensor* t) { return t ? t->data.data() : nullptr; }

uint64_t foam_tensor_numel(const foam_tensor* t) {
  return t ? static_cast<uint64_t>(t->data.size()) : 0;
}

void foam_tensor_free(foam_tensor* t) { delete t; }

foam_status foam_band_energy(const foam_tensor* image, const double* edges, uint32_t n_edges,
                             double* fractions_out) {
  if (auto st = require(image && edges && n_edges > 0 && fractions_out,
                        "band_energy: null argument"))
    return st;
  return guarded([&]() {
    foam::Tensor<float> t = foam::Tensor<float>::from_data(image->shape, image->data);
    if (t.rank() == 2) t = foam::reshape(t, {1, image->shape[0], image->shape[1]});
    auto report = foam::spectral::band_energy(foam::spectral::fft2(t),
                                              std::vector<double>(edges, edges + n_edges));
    for (std::size_t k = 0; k < report.fractions.size(); ++k)
      fractions_out[k] = report.fractions[k];
    return FOAM_OK;
  });
}

foam_status foam_corrupt(const foam_tensor* image, const char* kind, double parameter,
                         uint64_t seed, foam_tensor** out) {
  if (auto st = require(image && kind && out, "corrupt: null argument")) return st;
  return guarded([&]() {
    foam::hdc::CorruptionConfig cfg;
    cfg.seed = seed;
    const std::string k = kind;
    if (k == "gb") {
      cfg.kind = foam::hdc::CorruptionKind::GaussianBlur;
      cfg.gb_sigma = parameter;
    } else if (k == "du") {
      cfg.kind = foam::hdc::CorruptionKind::DownUp;
      cfg.du_factor = static_cast<std::size_t>(parameter);
    } else if (k == "gn") {
      cfg.kind = foam::hdc::CorruptionKind::GaussianNoise;
      cfg.gn_sigma = parameter;
    } else {
      throw foam::ValueError("corrupt: kind must be gb, du, or gn");
    }
    foam::Tensor<float> t = foam::Tensor<float>::from_data(image->shape, image->data);
    if (t.rank() == 2) t = foam::reshape(t, {1, image->shape[0], image->shape[1]});
    foam::Tensor<float> result = foam::hdc::corrupt(t, cfg);
    auto* o = new foam_tensor;
    o->shape = result.shape();
    o->data = result.values();
    *out = o;
    return FOAM_OK;
  });
}

foam_status foam_spectrum_run(const char* input_path, const char* corrupt_kind,
                              const char* out_dir, uint64_t seed, char** summary_json) {
  if (auto st = require(out_dir != nullptr, "spectrum_run: out_dir is required")) return st;
  return guarded([&]() {
    std::string summary = foam::engine::run_spectrum(
        input_path ? input_path : "", corrupt_kind ? corrupt_kind : "", out_dir, seed);
    if (summary_json) *summary_json = dup_string(summary);
    return FOAM_OK;
  });
}

foam_status foam_gradcheck_run(const char* component, double tol, char** report_json) {
  if (auto st = require(component != nullptr, "gradcheck_run: component is required")) return st;
  return guarded([&]() {
    std::string report = foam::engine::run_gradcheck(component, tol);
    const bool pass = foam::engine::gradcheck_summary_pass(report);
    if (report_json) *report_json = dup_string(report);
    if (!pass) {
      g_last_error = "gradient check exceeded tolerance";
      return FOAM_ERR_NUMERIC;
    }
    return FOAM_OK;
  });
}

foam_status foam_gen_data(const char* config_path, uint32_t count, const char* out_dir,
                          int64_t seed_override, char** summary_json) {
  if (auto st = require(out_dir && count > 0, "gen_data: out_dir and positive count required"))
    return st;
  return guarded([&]() {
    std::string summary =
        foam::engine::run_gen_data(config_path ? config_path : "", count, out_dir, seed_override);
    if (summary_json) *summary_json = dup_string(summary);
    return FOAM_OK;
  });
}

foam_status foam_train_run(const char* config_path, const char* data_dir, const char* out_dir,
                           int64_t seed_override, char** summary_json) {
  if (auto st = require(data_dir && out_dir, "train_run: data_dir and out_dir required")) return st;
  return guarded([&]() {
    std::string summary = foam::engine::run_train(config_path ? config_path : "", data_dir,
                                                  out_dir, seed_override);
    if (summary_json) *summary_json = dup_string(summary);
    return FOAM_OK;
  });
}

foam_status foam_eval_run(const char* ckpt_dir, const char* data_dir, char** report_json) {
  if (auto st = require(ckpt_dir && data_dir, "eval_run: ckpt_dir and data_dir required")) return st;
  return guarded([&]() {
    std::string report = foam::engine::run_eval(ckpt_dir, data_dir);
    if (report_json) *report_json = dup_string(report);
    return FOAM_OK;
  });
}

foam_status foam_ablate_run(const char* config_path, uint32_t seeds, const char* out_dir,
                            int layer_grid, char** report_json) {
  if (auto st = require(out_dir && seeds > 0, "ablate_run: out_dir and positive seeds required"))
    return st;
  return guarded([&]() {
    std::string report = foam::engine::run_ablate(config_path ? config_path : "", seeds, out_dir,
                                                  layer_grid != 0);
    if (report_json) *report_json = dup_string(report);
    return FOAM_OK;
  });
}

foam_status foam_dump_features_run(const char* ckpt_dir, const char* input_path, uint32_t stage,
                                   uint32_t level, const char* corrupt_kind, const char* out_dir,
                                   char** summary_json) {
  if (auto st = require(ckpt_dir && input_path && out_dir, "dump_features: null argument"))
    return st;
  return guarded([&]() {
    std::string summary = foam::engine::run_dump_features(
        ckpt_dir, input_path, stage, level, corrupt_kind ? corrupt_kind : "", out_dir);
    if (summary_json) *summary_json = dup_string(summary);
    return FOAM_OK;
  });
}

}  // extern "C"
