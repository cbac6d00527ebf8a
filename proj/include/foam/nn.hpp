#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "foam/spectral.hpp"
#include "foam/tensor.hpp"

namespace foam::nn {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

/// Fan-in-scaled uniform init in (-sqrt(6/fan_in), +sqrt(6/fan_in)).
/// fan_in is taken as numel / extent0, i.e. the per-output receptive size.
template <typename T>
Tensor<T> init_weight(Shape shape, Rng& rng) {
  const std::size_t fan_in = numel(shape) / shape[0];
  const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  return Tensor<T>::uniform(std::move(shape), -bound, bound, rng, /*requires_grad=*/true);
}

/// Seeded convenience wrapper around init_weight.
template <typename T>
Tensor<T> init_params(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return init_weight<T>(std::move(shape), rng);
}

template <typename T>
Tensor<T> init_bias(std::size_t n) {
  return Tensor<T>::zeros({n}, /*requires_grad=*/true);
}

/// Adds seeded uniform noise to every parameter. Gradient-check harnesses use
/// this to probe a generic point: freshly zero-initialized shifts can park
/// relu inputs exactly on the kink, where central differences are
/// meaningless.
template <typename T>
void jitter(NamedParams<T>& params, std::uint64_t seed, T amplitude = static_cast<T>(0.05)) {
  Rng rng(seed);
  for (auto& [name, p] : params) {
    for (T& v : p.values()) v += static_cast<T>(rng.uniform(-amplitude, amplitude));
  }
}

// ---------------------------------------------------------------------------
// Standard convolution ("same" zero padding)
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dParams {
  Tensor<T> weight;  // [Cout, Cin, k, k]
  Tensor<T> bias;    // [Cout]; frozen zeros when has_bias is false
  std::size_t dilation = 1;
  bool has_bias = true;

  static Conv2dParams init(std::size_t c_in, std::size_t c_out, std::size_t k,
                           std::size_t dilation, Rng& rng, bool with_bias = true) {
    if (k % 2 == 0) throw ValueError("conv2d: kernel size must be odd for same padding");
    Conv2dParams p;
    p.weight = init_weight<T>({c_out, c_in, k, k}, rng);
    p.bias = with_bias ? init_bias<T>(c_out) : Tensor<T>::zeros({c_out});
    p.dilation = dilation;
    p.has_bias = with_bias;
    return p;
  }

  std::size_t in_channels() const { return weight.shape()[1]; }
  std::size_t out_channels() const { return weight.shape()[0]; }
  std::size_t kernel() const { return weight.shape()[2]; }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".weight", weight);
    if (has_bias) out.emplace_back(prefix + ".bias", bias);
  }
};

namespace detail {

// Valid output range [lo, hi) along one axis for a tap displaced by d:
// input index i + d must land in [0, extent).
struct TapRange {
  std::ptrdiff_t lo, hi;
  TapRange(std::ptrdiff_t d, std::size_t extent) {
    const std::ptrdiff_t e = static_cast<std::ptrdiff_t>(extent);
    lo = std::max<std::ptrdiff_t>(0, -d);
    hi = std::min<std::ptrdiff_t>(e, e - d);
  }
};

}  // namespace detail

/// Cross-correlation with zero "same" padding; spatial size is preserved.
/// The tap loops sit outside the spatial loops so the inner loops are dense.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t dilation) {
  if (x.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be [Cout,Cin,k,k]");
  const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t cout = weight.shape()[0], k = weight.shape()[2];
  if (weight.shape()[1] != cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.shape()[1]) +
                     " input channels, input has " + std::to_string(cin));
  }
  if (weight.shape()[3] != k || k % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd");
  if (bias.size() != cout) throw ShapeError("conv2d: bias size mismatch");
  if (dilation == 0) throw ValueError("conv2d: dilation must be positive");

  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2 * dilation);
  const std::ptrdiff_t dil = static_cast<std::ptrdiff_t>(dilation);
  const auto& xv = x.values();
  const auto& wv = weight.values();
  const auto& bv = bias.values();
  std::vector<T> out(cout * h * w);
  for (std::size_t co = 0; co < cout; ++co) {
    T* oplane = out.data() + co * h * w;
    std::fill(oplane, oplane + h * w, bv[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xplane = xv.data() + ci * h * w;
      const T* wk = wv.data() + ((co * cin + ci) * k) * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * dil - half;
        const detail::TapRange ri(dy, h);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const T wt = wk[ky * k + kx];
          if (wt == T(0)) continue;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) * dil - half;
          const detail::TapRange rj(dx, w);
          for (std::ptrdiff_t i = ri.lo; i < ri.hi; ++i) {
            T* orow = oplane + i * static_cast<std::ptrdiff_t>(w);
            const T* xrow = xplane + (i + dy) * static_cast<std::ptrdiff_t>(w) + dx;
            for (std::ptrdiff_t j = rj.lo; j < rj.hi; ++j) orow[j] += wt * xrow[j];
          }
        }
      }
    }
  }
  return foam::detail::make_op<T>(
      {cout, h, w}, std::move(out), "conv2d", {x, weight, bias},
      [cin, cout, h, w, k, half, dil](foam::detail::TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        for (std::size_t co = 0; co < cout; ++co) {
          const T* gplane = self.grad.data() + co * h * w;
          if (pb.requires_grad) {
            T acc = T(0);
            for (std::size_t i = 0; i < h * w; ++i) acc += gplane[i];
            pb.grad[co] += acc;
          }
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* xplane = px.data.data() + ci * h * w;
            T* gxplane = px.requires_grad ? px.grad.data() + ci * h * w : nullptr;
            const std::size_t wbase = ((co * cin + ci) * k) * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * dil - half;
              const detail::TapRange ri(dy, h);
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) * dil - half;
                const detail::TapRange rj(dx, w);
                const T wt = pw.data[wbase + ky * k + kx];
                T wgrad = T(0);
                for (std::ptrdiff_t i = ri.lo; i < ri.hi; ++i) {
                  const T* grow = gplane + i * static_cast<std::ptrdiff_t>(w);
                  const T* xrow = xplane + (i + dy) * static_cast<std::ptrdiff_t>(w) + dx;
                  if (gxplane) {
                    T* gxrow = gxplane + (i + dy) * static_cast<std::ptrdiff_t>(w) + dx;
                    for (std::ptrdiff_t j = rj.lo; j < rj.hi; ++j) {
                      wgrad += grow[j] * xrow[j];
                      gxrow[j] += wt * grow[j];
                    }
                  } else {
                    for (std::ptrdiff_t j = rj.lo; j < rj.hi; ++j) wgrad += grow[j] * xrow[j];
                  }
                }
                if (pw.requires_grad) pw.grad[wbase + ky * k + kx] += wgrad;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dParams<T>& p) {
  return conv2d(x, p.weight, p.bias, p.dilation);
}

// ---------------------------------------------------------------------------
// Depthwise separable dilated convolution
// ---------------------------------------------------------------------------

template <typename T>
struct DDConvParams {
  Tensor<T> depthwise;  // [C, k, k], one kernel per input channel
  Tensor<T> pw_weight;  // [Cout, C, 1, 1]
  Tensor<T> pw_bias;    // [Cout]
  std::size_t dilation = 1;

  static DDConvParams init(std::size_t c_in, std::size_t c_out, std::size_t k,
                           std::size_t dilation, Rng& rng) {
    if (k % 2 == 0) throw ValueError("dd_conv: kernel size must be odd");
    DDConvParams p;
    p.depthwise = init_weight<T>({c_in, k, k}, rng);
    p.pw_weight = init_weight<T>({c_out, c_in, 1, 1}, rng);
    p.pw_bias = init_bias<T>(c_out);
    p.dilation = dilation;
    return p;
  }

  std::size_t in_channels() const { return depthwise.shape()[0]; }
  std::size_t out_channels() const { return pw_weight.shape()[0]; }
  std::size_t kernel() const { return depthwise.shape()[1]; }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".depthwise", depthwise);
    out.emplace_back(prefix + ".pw_weight", pw_weight);
    out.emplace_back(prefix + ".pw_bias", pw_bias);
  }
};

/// Per-channel dilated convolution, zero "same" padding, no bias.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t dilation) {
  if (x.rank() != 3) throw ShapeError("depthwise_conv2d: input must be [C,H,W]");
  if (weight.rank() != 3 || weight.shape()[0] != x.shape()[0]) {
    throw ShapeError("depthwise_conv2d: weight [C,k,k] must match input channels (" +
                     shape_str(weight.shape()) + " vs " + shape_str(x.shape()) + ")");
  }
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t k = weight.shape()[1];
  if (weight.shape()[2] != k || k % 2 == 0) throw ShapeError("depthwise_conv2d: kernel must be square and odd");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2 * dilation);
  const std::ptrdiff_t dil = static_cast<std::ptrdiff_t>(dilation);
  const auto& xv = x.values();
  const auto& wv = weight.values();
  std::vector<T> out(c * h * w, T(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* xplane = xv.data() + ch * h * w;
    const T* wk = wv.data() + ch * k * k;
    T* oplane = out.data() + ch * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * dil - half;
      const detail::TapRange ri(dy, h);
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T wt = wk[ky * k + kx];
        if (wt == T(0)) continue;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) * dil - half;
        const detail::TapRange rj(dx, w);
        for (std::ptrdiff_t i = ri.lo; i < ri.hi; ++i) {
          T* orow = oplane + i * static_cast<std::ptrdiff_t>(w);
          const T* xrow = xplane + (i + dy) * static_cast<std::ptrdiff_t>(w) + dx;
          for (std::ptrdiff_t j = rj.lo; j < rj.hi; ++j) orow[j] += wt * xrow[j];
        }
      }
    }
  }
  return foam::detail::make_op<T>(
      {c, h, w}, std::move(out), "depthwise_conv2d", {x, weight},
      [c, h, w, k, half, dil](foam::detail::TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T* gplane = self.grad.data() + ch * h * w;
          const T* xplane = px.data.data() + ch * h * w;
          T* gxplane = px.requires_grad ? px.grad.data() + ch * h * w : nullptr;
          const std::size_t wbase = ch * k * k;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * dil - half;
            const detail::TapRange ri(dy, h);
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) * dil - half;
              const detail::TapRange rj(dx, w);
              const T wt = pw.data[wbase + ky * k + kx];
              T wgrad = T(0);
              for (std::ptrdiff_t i = ri.lo; i < ri.hi; ++i) {
                const T* grow = gplane + i * static_cast<std::ptrdiff_t>(w);
                const T* xrow = xplane + (i + dy) * static_cast<std::ptrdiff_t>(w) + dx;
                if (gxplane) {
                  T* gxrow = gxplane + (i + dy) * static_cast<std::ptrdiff_t>(w) + dx;
                  for (std::ptrdiff_t j = rj.lo; j < rj.hi; ++j) {
                    wgrad += grow[j] * xrow[j];
                    gxrow[j] += wt * grow[j];
                  }
                } else {
                  for (std::ptrdiff_t j = rj.lo; j < rj.hi; ++j) wgrad += grow[j] * xrow[j];
                }
              }
              if (pw.requires_grad) pw.grad[wbase + ky * k + kx] += wgrad;
            }
          }
        }
      });
}

/// Depthwise dilated stage followed by a 1x1 pointwise projection.
template <typename T>
Tensor<T> dd_conv(const Tensor<T>& x, const DDConvParams<T>& p) {
  Tensor<T> mid = depthwise_conv2d(x, p.depthwise, p.dilation);
  return conv2d(mid, p.pw_weight, p.pw_bias, 1);
}

// ---------------------------------------------------------------------------
// Per-channel normalization over spatial positions
// ---------------------------------------------------------------------------

/// Standardizes each channel over its spatial positions with learned scale
/// and shift. Training mode uses the current sample's statistics and can
/// update the running buffers; evaluation mode uses the frozen running
/// statistics. Running buffers are plain tensors mutated in place.
template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                       bool update_stats, T momentum = static_cast<T>(0.1),
                       T eps = static_cast<T>(1e-5)) {
  if (x.rank() != 3) throw ShapeError("channel_norm: input must be [C,H,W]");
  const std::size_t c = x.shape()[0], m = x.shape()[1] * x.shape()[2];
  if (scale.size() != c || shift.size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw ShapeError("channel_norm: parameter extents must equal channel count");
  }
  const auto& xv = x.values();
  std::vector<T> mu(c), inv_std(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = xv.data() + ch * m;
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += static_cast<double>(p[i]);
      const double mean = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = static_cast<double>(p[i]) - mean;
        v += d * d;
      }
      const double var = v / static_cast<double>(m);
      mu[ch] = static_cast<T>(mean);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      if (update_stats) {
        running_mean.values()[ch] =
            (T(1) - momentum) * running_mean.values()[ch] + momentum * static_cast<T>(mean);
        running_var.values()[ch] =
            (T(1) - momentum) * running_var.values()[ch] + momentum * static_cast<T>(var);
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = running_mean.values()[ch];
      inv_std[ch] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(running_var.values()[ch]) + static_cast<double>(eps)));
    }
  }
  std::vector<T> out(xv.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T g = scale.values()[ch], b = shift.values()[ch];
    const T* p = xv.data() + ch * m;
    T* o = out.data() + ch * m;
    for (std::size_t i = 0; i < m; ++i) o[i] = g * ((p[i] - mu[ch]) * inv_std[ch]) + b;
  }
  return foam::detail::make_op<T>(
      x.shape(), std::move(out), "channel_norm", {x, scale, shift},
      [c, m, mu, inv_std, training](foam::detail::TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pscale = *self.parents[1];
        auto& pshift = *self.parents[2];
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T* xp = px.data.data() + ch * m;
          const T* gp = self.grad.data() + ch * m;
          const T gamma = pscale.data[ch];
          const T istd = inv_std[ch];
          const T mean = mu[ch];
          double gsum = 0.0, gxhat = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            const double xhat = static_cast<double>((xp[i] - mean) * istd);
            gsum += static_cast<double>(gp[i]);
            gxhat += static_cast<double>(gp[i]) * xhat;
          }
          if (pshift.requires_grad) pshift.grad[ch] += static_cast<T>(gsum);
          if (pscale.requires_grad) pscale.grad[ch] += static_cast<T>(gxhat);
          if (px.requires_grad) {
            if (training) {
              const double gmean = gsum / static_cast<double>(m);
              const double gxhat_mean = gxhat / static_cast<double>(m);
              for (std::size_t i = 0; i < m; ++i) {
                const double xhat = static_cast<double>((xp[i] - mean) * istd);
                px.grad[ch * m + i] += static_cast<T>(
                    static_cast<double>(gamma) * static_cast<double>(istd) *
                    (static_cast<double>(gp[i]) - gmean - xhat * gxhat_mean));
              }
            } else {
              for (std::size_t i = 0; i < m; ++i) {
                px.grad[ch * m + i] += gamma * istd * gp[i];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Sigma block: conv -> norm -> relu -> conv -> sigmoid, applied to the real
// and imaginary parts of a spectrum with shared weights.
// ---------------------------------------------------------------------------

template <typename T>
struct SigmaParams {
  Conv2dParams<T> conv1;  // 1x1
  Tensor<T> norm_scale;
  Tensor<T> norm_shift;
  Tensor<T> running_mean;  // buffer, not trained
  Tensor<T> running_var;   // buffer, not trained
  Conv2dParams<T> conv2;   // 1x1

  static SigmaParams init(std::size_t channels, Rng& rng) {
    SigmaParams p;
    // conv1 feeds straight into the normalization, which cancels any constant
    // per-channel shift; a bias there would be a dead parameter.
    p.conv1 = Conv2dParams<T>::init(channels, channels, 1, 1, rng, /*with_bias=*/false);
    p.norm_scale = Tensor<T>::ones({channels}, /*requires_grad=*/true);
    p.norm_shift = Tensor<T>::zeros({channels}, /*requires_grad=*/true);
    p.running_mean = Tensor<T>::zeros({channels});
    p.running_var = Tensor<T>::ones({channels});
    p.conv2 = Conv2dParams<T>::init(channels, channels, 1, 1, rng);
    return p;
  }

  std::size_t channels() const { return conv1.in_channels(); }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    conv1.collect(prefix + ".conv1", out);
    out.emplace_back(prefix + ".norm_scale", norm_scale);
    out.emplace_back(prefix + ".norm_shift", norm_shift);
    conv2.collect(prefix + ".conv2", out);
  }

  void collect_buffers(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".running_mean", running_mean);
    out.emplace_back(prefix + ".running_var", running_var);
  }
};

/// Applies the real-valued conv/norm/relu/conv/sigmoid sequence independently
/// to the real and imaginary parts with shared parameters. Output parts lie
/// in (0, 1).
template <typename T>
spectral::ComplexSpectrum<T> sigma_block(const spectral::ComplexSpectrum<T>& s, SigmaParams<T>& p,
                                         bool training, bool update_stats = true) {
  auto apply = [&](const Tensor<T>& part) {
    Tensor<T> h1 = conv2d(part, p.conv1);
    Tensor<T> h2 = channel_norm(h1, p.norm_scale, p.norm_shift, p.running_mean, p.running_var,
                                training, training && update_stats);
    Tensor<T> h3 = relu(h2);
    Tensor<T> h4 = conv2d(h3, p.conv2);
    return sigmoid(h4);
  };
  return {apply(s.re), apply(s.im)};
}

// ---------------------------------------------------------------------------
// Parameter directory serialization (tensor files + JSON manifest)
// ---------------------------------------------------------------------------

/// Writes each named tensor as <dir>/<mangled-name>.tns plus manifest.json
/// mapping name -> {file, shape} alongside flat string metadata.
void save_param_dir_f32(const std::string& dir,
                        const std::vector<std::pair<std::string, Shape>>& shapes,
                        const std::vector<std::vector<float>>& payloads,
                        const std::map<std::string, std::string>& info);

/// Reads manifest + tensors; returns name -> payload with shapes validated
/// by the caller.
void load_param_dir_f32(const std::string& dir,
                        std::vector<std::pair<std::string, Shape>>& shapes,
                        std::vector<std::vector<float>>& payloads,
                        std::map<std::string, std::string>& info);

template <typename T>
void save_params(const std::string& dir, const NamedParams<T>& params,
                 const std::map<std::string, std::string>& info) {
  std::vector<std::pair<std::string, Shape>> shapes;
  std::vector<std::vector<float>> payloads;
  for (const auto& [name, t] : params) {
    shapes.emplace_back(name, t.shape());
    std::vector<float> payload(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) payload[i] = static_cast<float>(t.values()[i]);
    payloads.push_back(std::move(payload));
  }
  save_param_dir_f32(dir, shapes, payloads, info);
}

/// Loads values into the given (already constructed) parameters in place, so
/// existing graph references keep pointing at the same storage.
template <typename T>
std::map<std::string, std::string> load_params(const std::string& dir, NamedParams<T>& params) {
  std::vector<std::pair<std::string, Shape>> shapes;
  std::vector<std::vector<float>> payloads;
  std::map<std::string, std::string> info;
  load_param_dir_f32(dir, shapes, payloads, info);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < shapes.size(); ++i) index[shapes[i].first] = i;
  for (auto& [name, t] : params) {
    auto it = index.find(name);
    if (it == index.end()) throw IoError("parameter missing from checkpoint: " + name);
    const auto& [fname, fshape] = shapes[it->second];
    if (fshape != t.shape()) {
      throw IoError("parameter shape mismatch for " + name + ": checkpoint " + shape_str(fshape) +
                    " vs model " + shape_str(t.shape()));
    }
    const auto& payload = payloads[it->second];
    for (std::size_t i = 0; i < payload.size(); ++i)
      t.values()[i] = static_cast<T>(payload[i]);
  }
  return info;
}

}  // namespace foam::nn
