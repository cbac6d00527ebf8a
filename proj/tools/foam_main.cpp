// foam: command-line front end over the libfoam C API.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "foam/foam_c.h"

namespace {

int status_to_exit(foam_status st) {
  switch (st) {
    case FOAM_OK:
      return 0;
    case FOAM_ERR_NUMERIC:
      return 2;
    default:
      return 1;  // usage / io / internal
  }
}

// --seed wins; otherwise FOAM_SEED from the environment; otherwise none (-1).
std::int64_t resolve_seed(const CLI::Option* seed_opt, std::int64_t seed_value) {
  if (seed_opt->count() > 0) return seed_value;
  if (const char* env = std::getenv("FOAM_SEED")) {
    return static_cast<std::int64_t>(std::strtoll(env, nullptr, 10));
  }
  return -1;
}

int finish(foam_status st, char* json, const std::string& json_out_path) {
  if (json) {
    std::fputs(json, stdout);
    std::fputc('\n', stdout);
    if (!json_out_path.empty()) {
      std::ofstream os(json_out_path);
      os << json << "\n";
    }
    foam_string_free(json);
  }
  if (st != FOAM_OK) {
    std::fprintf(stderr, "error: %s\n", foam_last_error());
  }
  return status_to_exit(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FOAM frequency-optimized anti-overlapping toolkit"};
  app.require_subcommand(1);

  // ---- spectrum -----------------------------------------------------------
  auto* spectrum = app.add_subcommand(
      "spectrum", "Write spatial images, log-magnitude/phase spectra, and band-energy reports");
  std::string sp_input, sp_corrupt, sp_out;
  bool sp_demo = false;
  std::int64_t sp_seed = 0;
  spectrum->add_option("--input", sp_input, "Input tensor (.tns), [C,H,W] or [H,W]");
  spectrum->add_flag("--demo", sp_demo, "Use the built-in demo scene");
  spectrum->add_option("--corrupt", sp_corrupt, "Also analyze a corrupted copy: gb|du|gn");
  spectrum->add_option("--out", sp_out, "Output directory")->required();
  auto* sp_seed_opt = spectrum->add_option("--seed", sp_seed, "Seed for demo scene / noise");

  // ---- gradcheck ----------------------------------------------------------
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  std::string gc_component = "all", gc_out;
  double gc_tol = 1e-3;
  gradcheck->add_option("--component", gc_component, "conv|ddconv|sigma|sdca|fdba|fsfn|fstb|loss1|loss2|all");
  gradcheck->add_option("--tol", gc_tol, "Relative-error tolerance (default 1e-3)");
  gradcheck->add_option("--out", gc_out, "Also write the JSON report here");

  // ---- gen-data -----------------------------------------------------------
  auto* gen_data = app.add_subcommand("gen-data", "Generate a synthetic overlapping-scene dataset");
  std::string gd_config, gd_out;
  std::uint32_t gd_count = 64;
  std::int64_t gd_seed = 0;
  gen_data->add_option("--config", gd_config, "Training config file (scene.* keys)");
  gen_data->add_option("--count", gd_count, "Number of scenes")->required();
  gen_data->add_option("--out", gd_out, "Dataset directory")->required();
  auto* gd_seed_opt = gen_data->add_option("--seed", gd_seed, "Override scene.seed");

  // ---- train --------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train the toy model on a dataset directory");
  std::string tr_config, tr_data, tr_out;
  std::int64_t tr_seed = 0;
  train->add_option("--config", tr_config, "Training config file");
  train->add_option("--data", tr_data, "Dataset directory")->required();
  train->add_option("--out", tr_out, "Checkpoint/trace directory")->required();
  auto* tr_seed_opt = train->add_option("--seed", tr_seed, "Override train.seed");

  // ---- eval ---------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out;
  eval->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->required();
  eval->add_option("--data", ev_data, "Dataset directory")->required();
  eval->add_option("--out", ev_out, "Also write the JSON report here");

  // ---- ablate -------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "Run the baseline / +FSTB / +FSTB+HDC comparison");
  std::string ab_config, ab_out;
  std::uint32_t ab_seeds = 5;
  bool ab_grid = false;
  std::int64_t ab_seed = 0;
  ablate->add_option("--config", ab_config, "Training config file");
  ablate->add_option("--seeds", ab_seeds, "Number of seeds per cell");
  ablate->add_option("--out", ab_out, "Report directory")->required();
  ablate->add_flag("--layer-grid", ab_grid, "Also sweep the target layer set (top1/top2/all)");
  auto* ab_seed_opt = ablate->add_option("--seed", ab_seed, "(accepted; base seed comes from config)");

  // ---- dump-features ------------------------------------------------------
  auto* dump = app.add_subcommand("dump-features", "Write per-channel PGMs and the raw tensor of one pyramid feature");
  std::string df_ckpt, df_input, df_corrupt, df_out;
  std::uint32_t df_stage = 1, df_level = 3;
  dump->add_option("--ckpt", df_ckpt, "Checkpoint directory")->required();
  dump->add_option("--input", df_input, "Scene image tensor (.tns)")->required();
  dump->add_option("--stage", df_stage, "Pyramid stage n (0 = backbone)");
  dump->add_option("--level", df_level, "Pyramid level l (1-based)");
  dump->add_option("--corrupt", df_corrupt, "Also dump the corrupted-input features: gb|du|gn");
  dump->add_option("--out", df_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  char* json = nullptr;

  if (spectrum->parsed()) {
    if (sp_input.empty() && !sp_demo) {
      std::fprintf(stderr, "error: spectrum needs --input or --demo\n");
      return 1;
    }
    const std::int64_t seed = resolve_seed(sp_seed_opt, sp_seed);
    foam_status st = foam_spectrum_run(sp_input.empty() ? nullptr : sp_input.c_str(),
                                       sp_corrupt.empty() ? nullptr : sp_corrupt.c_str(),
                                       sp_out.c_str(), seed < 0 ? 0 : static_cast<std::uint64_t>(seed),
                                       &json);
    return finish(st, json, "");
  }

  if (gradcheck->parsed()) {
    foam_status st = foam_gradcheck_run(gc_component.c_str(), gc_tol, &json);
    return finish(st, json, gc_out);
  }

  if (gen_data->parsed()) {
    foam_status st = foam_gen_data(gd_config.empty() ? nullptr : gd_config.c_str(), gd_count,
                                   gd_out.c_str(), resolve_seed(gd_seed_opt, gd_seed), &json);
    return finish(st, json, "");
  }

  if (train->parsed()) {
    foam_status st = foam_train_run(tr_config.empty() ? nullptr : tr_config.c_str(),
                                    tr_data.c_str(), tr_out.c_str(),
                                    resolve_seed(tr_seed_opt, tr_seed), &json);
    return finish(st, json, "");
  }

  if (eval->parsed()) {
    foam_status st = foam_eval_run(ev_ckpt.c_str(), ev_data.c_str(), &json);
    return finish(st, json, ev_out);
  }

  if (ablate->parsed()) {
    (void)ab_seed_opt;
    foam_status st = foam_ablate_run(ab_config.empty() ? nullptr : ab_config.c_str(), ab_seeds,
                                     ab_out.c_str(), ab_grid ? 1 : 0, &json);
    return finish(st, json, "");
  }

  if (dump->parsed()) {
    foam_status st = foam_dump_features_run(df_ckpt.c_str(), df_input.c_str(), df_stage, df_level,
                                            df_corrupt.empty() ? nullptr : df_corrupt.c_str(),
                                            df_out.c_str(), &json);
    return finish(st, json, "");
  }

  return 1;
}
