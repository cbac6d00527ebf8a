#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "foam/config.hpp"
#include "foam/fstb.hpp"
#include "foam/hdc.hpp"
#include "foam/scenes.hpp"

namespace foam::harness {

using FTensor = Tensor<float>;

// ---------------------------------------------------------------------------
// Model pieces
// ---------------------------------------------------------------------------

/// L conv stages (conv -> per-channel norm -> relu -> 2x subsample), so level
/// l lives at input_size / 2^l with a constant channel width. The norm keeps
/// stage outputs zero-mean, which in particular keeps the DC bin of the
/// downstream spectra from dominating everything else.
struct BackboneStage {
  nn::Conv2dParams<float> conv;
  Tensor<float> norm_scale;
  Tensor<float> norm_shift;
  Tensor<float> running_mean;
  Tensor<float> running_var;
};

struct TinyBackboneParams {
  std::vector<BackboneStage> stages;

  static TinyBackboneParams init(std::size_t in_channels, std::size_t channels,
                                 std::size_t levels, Rng& rng);
  void collect(const std::string& prefix, nn::NamedParams<float>& out);
  void collect_buffers(const std::string& prefix, nn::NamedParams<float>& out);
};

/// Upsamples every level back to full resolution, concatenates, normalizes
/// per channel (the pyramid mixes spatial- and frequency-scale features), and
/// projects to a single logit map with a 1x1 conv.
struct SegHeadParams {
  Tensor<float> norm_scale;
  Tensor<float> norm_shift;
  Tensor<float> running_mean;
  Tensor<float> running_var;
  nn::Conv2dParams<float> fuse;

  static SegHeadParams init(std::size_t channels, std::size_t levels, Rng& rng);
  void collect(const std::string& prefix, nn::NamedParams<float>& out);
  void collect_buffers(const std::string& prefix, nn::NamedParams<float>& out);
};

std::vector<FTensor> backbone_forward(const FTensor& image, TinyBackboneParams& params,
                                      bool training, bool update_stats);
FTensor seg_head_forward(const std::vector<FTensor>& levels, SegHeadParams& params,
                         std::size_t full_h, std::size_t full_w, bool training,
                         bool update_stats);
FTensor task_loss(const FTensor& logits, const FTensor& mask);

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  // model
  std::size_t channels = 16;
  std::size_t levels = 3;
  std::size_t fstb_stages = 1;          // N
  std::string fstb_levels = "top2";     // top1 | top2 | all | comma list (1-based)
  std::size_t dilation = 2;
  std::size_t attention_cap = 4096;
  double fstb_output_gain = 0.01;
  // optimization
  std::size_t steps = 300;
  std::size_t batch_size = 4;
  double lr = 0.05;
  double momentum = 0.9;
  double grad_clip = 1.0;               // global L2 norm cap; 0 disables
  std::string optimizer = "sgd";        // sgd | adam
  std::uint64_t seed = 1;
  bool enable_fstb = true;
  bool enable_hdc = true;
  std::size_t train_scenes = 64;
  std::size_t eval_scenes = 32;
  // hdc
  hdc::CorruptionConfig corruption;
  hdc::ConsistentLossConfig loss;       // target_layers filled from hdc_layers
  std::string hdc_layers = "top2";
  bool corruption_grads_into_backbone = true;
  // data
  scenes::SceneConfig scene;

  void validate() const;
  static TrainConfig from_config(const Config& cfg);
  Config to_config() const;
};

/// Resolves "top1" / "top2" / "all" / "1,3" into 1-based level indices.
std::vector<std::size_t> resolve_level_set(const std::string& spec, std::size_t levels);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Model {
  std::size_t channels = 0;
  std::size_t levels = 0;
  std::size_t fstb_stages = 0;
  bool enable_fstb = true;
  std::vector<std::size_t> fstb_level_set;  // 1-based levels refined by FSTBs
  bool corruption_grads_into_backbone = true;

  TinyBackboneParams backbone;
  std::vector<fstb::FstbParams<float>> blocks;
  SegHeadParams head;

  static Model init(const TrainConfig& cfg, std::uint64_t seed);

  nn::NamedParams<float> parameters();
  nn::NamedParams<float> state();  // parameters plus running statistics

  /// Builds pyramid stages 0..N (N = 0 without FSTB). is_base gates running
  /// statistic updates and the corruption-branch backbone detach.
  hdc::FeaturePyramid<float> forward_pyramid(const FTensor& image, bool training, bool is_base);

  FTensor forward_logits(const hdc::FeaturePyramid<float>& pyramid, std::size_t full_h,
                         std::size_t full_w, bool training = false);

  void save(const std::string& dir) const;
  static Model load(const std::string& dir);
};

// ---------------------------------------------------------------------------
// Training / evaluation / ablation
// ---------------------------------------------------------------------------

struct TraceRow {
  std::size_t step = 0;
  double task = 0.0;
  double consistent = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  double initial_task = 0.0;
  double final_task = 0.0;
};

/// Deterministic per (cfg, dataset). When out_dir is nonempty, writes the
/// checkpoint directory plus trace.csv (step,task_loss,consistent_loss,total).
TrainResult train(const TrainConfig& cfg, const std::vector<scenes::Scene>& dataset,
                  const std::string& out_dir, Model* trained = nullptr);

struct EvalReport {
  double mean_iou = 0.0;
  std::vector<double> per_scene_iou;
  double precision = 0.0;
  double recall = 0.0;
};

EvalReport evaluate(Model& model, const std::vector<scenes::Scene>& dataset);

struct AblationCell {
  std::string name;
  std::vector<double> per_seed_iou;
  double median_iou = 0.0;
};

struct AblationReport {
  std::vector<AblationCell> cells;  // baseline, fstb, fstb_hdc in order
  double margin_fstb = 0.0;         // median(+FSTB) - median(baseline)
  double margin_hdc = 0.0;          // median(+FSTB+HDC) - median(+FSTB)
  bool ordering_holds = false;
};

AblationReport run_ablation(const TrainConfig& base, std::size_t n_seeds);

struct LayerGridCell {
  std::string layer_set;
  std::vector<double> per_seed_iou;
  double median_iou = 0.0;
};

/// Table VI analog: +FSTB+HDC trained with different target layer sets.
std::vector<LayerGridCell> run_layer_grid(const TrainConfig& base, std::size_t n_seeds,
                                          const std::vector<std::string>& layer_sets);

double median(std::vector<double> values);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);
std::vector<TraceRow> read_trace_csv(const std::string& path);

}  // namespace foam::harness
