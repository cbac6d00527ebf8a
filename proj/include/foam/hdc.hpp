#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "foam/rng.hpp"
#include "foam/tensor.hpp"

namespace foam::hdc {

// ---------------------------------------------------------------------------
// Corruption operators
// ---------------------------------------------------------------------------

enum class CorruptionKind { GaussianBlur, DownUp, GaussianNoise };

struct CorruptionConfig {
  CorruptionKind kind = CorruptionKind::GaussianBlur;
  std::size_t gb_kernel_size = 3;  // odd
  double gb_sigma = 5.0;
  std::size_t du_factor = 4;       // >= 2
  double gn_sigma = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (gb_kernel_size % 2 == 0 || gb_kernel_size == 0)
      throw ValueError("corruption: gb_kernel_size must be odd");
    if (gb_sigma <= 0.0) throw ValueError("corruption: gb_sigma must be positive");
    if (du_factor < 2) throw ValueError("corruption: du_factor must be >= 2");
    if (gn_sigma < 0.0) throw ValueError("corruption: gn_sigma must be nonnegative");
  }
};

/// Normalized 1D Gaussian taps; sums to 1.
inline std::vector<double> gaussian_kernel1d(std::size_t ks, double sigma) {
  if (ks % 2 == 0) throw ValueError("gaussian_kernel1d: kernel size must be odd");
  std::vector<double> k(ks);
  const double half = static_cast<double>(ks / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < ks; ++i) {
    const double x = static_cast<double>(i) - half;
    k[i] = std::exp(-0.5 * x * x / (sigma * sigma));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

namespace detail {

// Symmetric reflection: ..., 1, 0 | 0, 1, ..., n-1 | n-1, n-2, ...
inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const std::ptrdiff_t nn = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i - 1;
  if (i >= nn) i = 2 * nn - i - 1;
  return static_cast<std::size_t>(i);
}

/// Bilinear resample of one plane to a new size, half-pixel centers with
/// edge clamping.
inline void bilinear_resize(const std::vector<double>& src, std::size_t sh, std::size_t sw,
                            std::vector<double>& dst, std::size_t dh, std::size_t dw) {
  dst.assign(dh * dw, 0.0);
  const double ry = static_cast<double>(sh) / static_cast<double>(dh);
  const double rx = static_cast<double>(sw) / static_cast<double>(dw);
  for (std::size_t i = 0; i < dh; ++i) {
    double sy = (static_cast<double>(i) + 0.5) * ry - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(sh - 1));
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, sh - 1);
    const double ty = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < dw; ++j) {
      double sx = (static_cast<double>(j) + 0.5) * rx - 0.5;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(sw - 1));
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, sw - 1);
      const double tx = sx - static_cast<double>(x0);
      const double a = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
      const double b = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
      dst[i * dw + j] = a * (1.0 - ty) + b * ty;
    }
  }
}

}  // namespace detail

/// Applies the configured corruption to an image in [0,1]. The result is a
/// plain tensor (no gradient history): corruption acts on inputs, never on
/// parameters.
template <typename T>
Tensor<T> corrupt(const Tensor<T>& image, const CorruptionConfig& cfg) {
  cfg.validate();
  if (image.rank() != 3) throw ShapeError("corrupt: image must be [C,H,W]");
  for (const T& v : image.values()) {
    if (v < T(0) || v > T(1)) throw ValueError("corrupt: image values must lie in [0,1]");
  }
  const std::size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  std::vector<T> out(image.size());

  switch (cfg.kind) {
    case CorruptionKind::GaussianBlur: {
      const auto k1 = gaussian_kernel1d(cfg.gb_kernel_size, cfg.gb_sigma);
      const std::size_t ks = k1.size();
      const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(ks / 2);
      // Separable blur with reflect padding; kernel sums to 1 per axis.
      std::vector<double> tmp(h * w), plane(h * w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = image.values().data() + ch * h * w;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < ks; ++t) {
              const std::size_t jj =
                  detail::reflect(static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(t) - half, w);
              acc += k1[t] * static_cast<double>(src[i * w + jj]);
            }
            tmp[i * w + j] = acc;
          }
        }
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < ks; ++t) {
              const std::size_t ii =
                  detail::reflect(static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(t) - half, h);
              acc += k1[t] * tmp[ii * w + j];
            }
            plane[i * w + j] = acc;
          }
        }
        for (std::size_t i = 0; i < h * w; ++i) out[ch * h * w + i] = static_cast<T>(plane[i]);
      }
      break;
    }
    case CorruptionKind::DownUp: {
      if (cfg.du_factor > h || cfg.du_factor > w) {
        throw ValueError("corrupt: du_factor " + std::to_string(cfg.du_factor) +
                         " exceeds image side " + std::to_string(std::min(h, w)));
      }
      const std::size_t sh = h / cfg.du_factor, sw = w / cfg.du_factor;
      std::vector<double> small(sh * sw), up;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = image.values().data() + ch * h * w;
        for (std::size_t i = 0; i < sh; ++i)
          for (std::size_t j = 0; j < sw; ++j)
            small[i * sw + j] = static_cast<double>(src[(i * cfg.du_factor) * w + j * cfg.du_factor]);
        detail::bilinear_resize(small, sh, sw, up, h, w);
        for (std::size_t i = 0; i < h * w; ++i) out[ch * h * w + i] = static_cast<T>(up[i]);
      }
      break;
    }
    case CorruptionKind::GaussianNoise: {
      if (cfg.gn_sigma == 0.0) {  // degenerate: exact identity
        out = image.values();
        break;
      }
      Rng rng(cfg.seed);
      for (std::size_t i = 0; i < image.size(); ++i) {
        const double v = static_cast<double>(image.values()[i]) + rng.normal(0.0, cfg.gn_sigma);
        out[i] = static_cast<T>(std::min(std::max(v, 0.0), 1.0));
      }
      break;
    }
  }
  return Tensor<T>::from_data(image.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Feature pyramids and consistent losses
// ---------------------------------------------------------------------------

/// stages[n][l]: stage n in 0..N (0 = backbone output), level l in 0..L-1.
template <typename T>
struct FeaturePyramid {
  std::vector<std::vector<Tensor<T>>> stages;

  std::size_t num_stages() const { return stages.size(); }
  std::size_t num_levels() const { return stages.empty() ? 0 : stages[0].size(); }
};

enum class LossType { TypeI, TypeII };

struct ConsistentLossConfig {
  LossType loss_type = LossType::TypeI;
  std::vector<std::size_t> target_layers;  // 1-based level indices, nonempty
  double lambda = 1.0;
  bool detach_base = true;  // the base branch acts as the teacher
  // Consumed by hdc_step when assembling the teacher set. true (default):
  // the clean feature at the same FSTB depth supervises each corrupted
  // feature, so identity corruption is an exact no-op loss. false: the
  // teacher is the clean feature one stage earlier (the literal printed
  // pairing), which is nonzero even for identical branches.
  bool same_depth_teacher = true;

  void validate(std::size_t num_levels) const {
    if (target_layers.empty()) throw ValueError("consistent loss: target layer set is empty");
    for (std::size_t l : target_layers) {
      if (l < 1 || l > num_levels) {
        throw ValueError("consistent loss: layer " + std::to_string(l) +
                         " outside 1.." + std::to_string(num_levels));
      }
    }
    if (lambda <= 0.0) throw ValueError("consistent loss: lambda must be positive");
  }
};

namespace detail {

template <typename T>
void check_aligned(const FeaturePyramid<T>& f_o, const FeaturePyramid<T>& f_c) {
  if (f_o.num_stages() != f_c.num_stages() || f_o.num_stages() < 2) {
    throw ShapeError("consistent loss: pyramids must share >= 2 stages (backbone + FSTB)");
  }
  if (f_o.num_levels() != f_c.num_levels()) {
    throw ShapeError("consistent loss: pyramids have different level counts");
  }
  for (std::size_t n = 0; n < f_o.num_stages(); ++n) {
    for (std::size_t l = 0; l < f_o.num_levels(); ++l) {
      if (f_o.stages[n][l].shape() != f_c.stages[n][l].shape()) {
        throw ShapeError("consistent loss: shape mismatch at stage " + std::to_string(n) +
                         " level " + std::to_string(l + 1));
      }
    }
  }
}

}  // namespace detail

/// Type I: per-channel softmax over spatial positions of F_O^{n-1} (teacher)
/// and F_C^{n} (student), KL(teacher || student) summed over positions,
/// averaged over channels, summed over stages and target layers, scaled by
/// lambda. Nonnegative by construction.
template <typename T>
Tensor<T> consistent_loss_type1(const FeaturePyramid<T>& f_o, const FeaturePyramid<T>& f_c,
                                const ConsistentLossConfig& cfg) {
  detail::check_aligned(f_o, f_c);
  cfg.validate(f_o.num_levels());
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t n = 1; n < f_c.num_stages(); ++n) {
    for (std::size_t layer : cfg.target_layers) {
      const std::size_t l = layer - 1;
      Tensor<T> teacher = f_o.stages[n - 1][l];
      if (cfg.detach_base) teacher = teacher.detach();
      const Tensor<T>& student = f_c.stages[n][l];
      const std::size_t c = teacher.shape()[0];
      const std::size_t hw = teacher.shape()[1] * teacher.shape()[2];
      Tensor<T> t_logits = reshape(teacher, {c, hw});
      Tensor<T> s_logits = reshape(student, {c, hw});
      Tensor<T> log_t = log_softmax(t_logits, 1);
      Tensor<T> t_prob = exp_(log_t);
      Tensor<T> log_s = log_softmax(s_logits, 1);
      Tensor<T> kl = sum(mul(t_prob, sub(log_t, log_s)));
      total = add(total, mul_scalar(kl, static_cast<T>(1.0 / static_cast<double>(c))));
    }
  }
  return mul_scalar(total, static_cast<T>(cfg.lambda));
}

/// Type II: squared differences between F_O^{n-1} and F_C^{n}, normalized by
/// 1/(HW) per aligned pair, summed over stages and target layers, scaled by
/// lambda.
template <typename T>
Tensor<T> consistent_loss_type2(const FeaturePyramid<T>& f_o, const FeaturePyramid<T>& f_c,
                                const ConsistentLossConfig& cfg) {
  detail::check_aligned(f_o, f_c);
  cfg.validate(f_o.num_levels());
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (std::size_t n = 1; n < f_c.num_stages(); ++n) {
    for (std::size_t layer : cfg.target_layers) {
      const std::size_t l = layer - 1;
      Tensor<T> teacher = f_o.stages[n - 1][l];
      if (cfg.detach_base) teacher = teacher.detach();
      const Tensor<T>& student = f_c.stages[n][l];
      const std::size_t hw = teacher.shape()[1] * teacher.shape()[2];
      Tensor<T> d = sub(teacher, student);
      total = add(total, mul_scalar(sum(mul(d, d)), static_cast<T>(1.0 / static_cast<double>(hw))));
    }
  }
  return mul_scalar(total, static_cast<T>(cfg.lambda));
}

template <typename T>
Tensor<T> consistent_loss(const FeaturePyramid<T>& f_o, const FeaturePyramid<T>& f_c,
                          const ConsistentLossConfig& cfg) {
  return cfg.loss_type == LossType::TypeI ? consistent_loss_type1(f_o, f_c, cfg)
                                          : consistent_loss_type2(f_o, f_c, cfg);
}

// ---------------------------------------------------------------------------
// Dual-branch training step
// ---------------------------------------------------------------------------

/// Number of corruption branches constructed so far in this process. The
/// inference path must leave this untouched; tests assert on it.
std::atomic<std::uint64_t>& corruption_branch_count();

template <typename T>
struct HdcStepResult {
  Tensor<T> loss;
  FeaturePyramid<T> base;
  FeaturePyramid<T> corrupted;
};

/// Runs the original and corrupted images through the same shared-weight
/// forward (the callback captures backbone + FSTB parameters; is_base
/// distinguishes the branch for running-statistics handling) and returns the
/// consistent loss plus both pyramids. Training-only: inference never calls
/// this.
template <typename T>
HdcStepResult<T> hdc_step(
    const Tensor<T>& image,
    const std::function<FeaturePyramid<T>(const Tensor<T>&, bool is_base)>& shared_forward,
    const CorruptionConfig& ccfg, const ConsistentLossConfig& lcfg) {
  corruption_branch_count().fetch_add(1, std::memory_order_relaxed);
  Tensor<T> corrupted_image = corrupt(image, ccfg);
  HdcStepResult<T> result;
  result.base = shared_forward(image, /*is_base=*/true);
  result.corrupted = shared_forward(corrupted_image, /*is_base=*/false);
  if (lcfg.same_depth_teacher) {
    // The loss reads teacher slots n-1 against student slots n; advancing the
    // teacher stages by one pairs features of equal FSTB depth.
    FeaturePyramid<T> teacher = result.base;
    for (std::size_t m = 0; m + 1 < teacher.stages.size(); ++m) {
      teacher.stages[m] = result.base.stages[m + 1];
    }
    result.loss = consistent_loss(teacher, result.corrupted, lcfg);
  } else {
    result.loss = consistent_loss(result.base, result.corrupted, lcfg);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Theorem I contrast property
// ---------------------------------------------------------------------------

/// Contrast at the foreground contour before and after the background
/// response drops by c: (f+b)/b versus (f+b-c)/(b-c). The caller asserts
/// after > before.
inline std::pair<double, double> theorem1_contrast(double f, double b, double c) {
  if (f <= 0.0 || b <= 0.0) throw ValueError("theorem1: f and b must be positive");
  if (c <= 0.0 || c >= b) throw ValueError("theorem1: require 0 < c < b");
  return {(f + b) / b, (f + b - c) / (b - c)};
}

}  // namespace foam::hdc
