#pragma once

// Workflow entry points shared by the C API and (through it) the CLI. Each
// call performs one end-to-end operation, writes its artifacts to disk, and
// returns a machine-readable JSON summary.

#include <cstdint>
#include <string>

namespace foam::engine {

/// Writes spatial/corrupted images (PGM), fftshifted log-magnitude and phase
/// spectra (PGM), and band-energy reports (JSON) into out_dir. An empty
/// input_path renders the built-in demo scene from `seed`. corrupt_kind is
/// "", "gb", "du", or "gn".
std::string run_spectrum(const std::string& input_path, const std::string& corrupt_kind,
                         const std::string& out_dir, std::uint64_t seed);

/// Components: conv | ddconv | sigma | sdca | fdba | fsfn | fstb | loss1 |
/// loss2 | all. f64 checks at h = 1e-5 on C=4, 8x8 inputs. The summary's
/// "pass" field is false when any component exceeds the tolerance.
std::string run_gradcheck(const std::string& component, double tol);

bool gradcheck_summary_pass(const std::string& report_json);

std::string run_gen_data(const std::string& config_path, std::size_t count,
                         const std::string& out_dir, std::int64_t seed_override);

std::string run_train(const std::string& config_path, const std::string& data_dir,
                      const std::string& out_dir, std::int64_t seed_override);

std::string run_eval(const std::string& ckpt_dir, const std::string& data_dir);

std::string run_ablate(const std::string& config_path, std::size_t seeds,
                       const std::string& out_dir, bool layer_grid);

std::string run_dump_features(const std::string& ckpt_dir, const std::string& input_path,
                              std::size_t stage, std::size_t level,
                              const std::string& corrupt_kind, const std::string& out_dir);

}  // namespace foam::engine
