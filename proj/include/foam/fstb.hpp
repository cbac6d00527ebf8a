#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "foam/nn.hpp"
#include "foam/spectral.hpp"
#include "foam/tensor.hpp"

namespace foam::fstb {

/// Elementwise complex product of two spectra.
template <typename T>
spectral::ComplexSpectrum<T> complex_hadamard(const spectral::ComplexSpectrum<T>& a,
                                              const spectral::ComplexSpectrum<T>& b) {
  return {sub(mul(a.re, b.re), mul(a.im, b.im)), add(mul(a.re, b.im), mul(a.im, b.re))};
}

struct FstbConfig {
  std::size_t channels = 16;
  std::size_t dilation = 2;        // rate shared by every DD conv in the block
  std::size_t attention_cap = 4096;  // max N = H*W for the dense N x N map
  // Scale on the FSFN fuse init so a fresh block starts close to the
  // identity (the block-level residual carries the signal) and the refinement
  // grows from small weights instead of swamping downstream consumers.
  double output_gain = 0.1;
};

// ---------------------------------------------------------------------------
// SDCA: channel self-attention over spatial-domain projections
// ---------------------------------------------------------------------------

template <typename T>
struct SdcaParams {
  nn::Conv2dParams<T> pos_embed;  // 1x1, C -> C, shared by the Q/K/V paths
  nn::DDConvParams<T> q3, q5;     // C -> C/2 each; concat restores C
  nn::DDConvParams<T> k3, k5;
  nn::DDConvParams<T> v3, v5;
  nn::DDConvParams<T> r3, r5;     // residual pair applied to the raw input
  nn::Conv2dParams<T> fuse;       // 1x1, 2C -> C

  static SdcaParams init(const FstbConfig& cfg, Rng& rng) {
    const std::size_t c = cfg.channels;
    if (c % 2 != 0) throw ValueError("sdca: channel count must be even");
    const std::size_t half = c / 2, d = cfg.dilation;
    SdcaParams p;
    p.pos_embed = nn::Conv2dParams<T>::init(c, c, 1, 1, rng);
    p.q3 = nn::DDConvParams<T>::init(c, half, 3, d, rng);
    p.q5 = nn::DDConvParams<T>::init(c, half, 5, d, rng);
    p.k3 = nn::DDConvParams<T>::init(c, half, 3, d, rng);
    p.k5 = nn::DDConvParams<T>::init(c, half, 5, d, rng);
    p.v3 = nn::DDConvParams<T>::init(c, half, 3, d, rng);
    p.v5 = nn::DDConvParams<T>::init(c, half, 5, d, rng);
    p.r3 = nn::DDConvParams<T>::init(c, half, 3, d, rng);
    p.r5 = nn::DDConvParams<T>::init(c, half, 5, d, rng);
    p.fuse = nn::Conv2dParams<T>::init(2 * c, c, 1, 1, rng);
    return p;
  }

  void collect(const std::string& prefix, nn::NamedParams<T>& out) {
    pos_embed.collect(prefix + ".pos_embed", out);
    q3.collect(prefix + ".q3", out);
    q5.collect(prefix + ".q5", out);
    k3.collect(prefix + ".k3", out);
    k5.collect(prefix + ".k5", out);
    v3.collect(prefix + ".v3", out);
    v5.collect(prefix + ".v5", out);
    r3.collect(prefix + ".r3", out);
    r5.collect(prefix + ".r5", out);
    fuse.collect(prefix + ".fuse", out);
  }
};

template <typename T>
struct SdcaDebug {
  Tensor<T> attention;  // C x C map, rows sum to 1
};

template <typename T>
Tensor<T> sdca_forward(const Tensor<T>& x, const SdcaParams<T>& p, SdcaDebug<T>* debug = nullptr) {
  if (x.rank() != 3) throw ShapeError("sdca: input must be [C,H,W]");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (c % 2 != 0) throw ValueError("sdca: channel count must be even");
  const std::size_t n = h * w;

  Tensor<T> e = nn::conv2d(x, p.pos_embed);
  Tensor<T> q = concat0<T>({nn::dd_conv(e, p.q3), nn::dd_conv(e, p.q5)});
  Tensor<T> k = concat0<T>({nn::dd_conv(e, p.k3), nn::dd_conv(e, p.k5)});
  Tensor<T> v = concat0<T>({nn::dd_conv(e, p.v3), nn::dd_conv(e, p.v5)});

  Tensor<T> qf = reshape(q, {c, n});
  Tensor<T> kf = reshape(k, {c, n});
  Tensor<T> vf = reshape(v, {c, n});

  // C x C channel map, scaled by 1/sqrt(N) before the row softmax.
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(n)));
  Tensor<T> logits = mul_scalar(matmul(qf, transpose2d(kf)), scale);
  Tensor<T> attn = softmax(logits, 1);
  if (debug) debug->attention = attn;

  Tensor<T> attended = reshape(matmul(attn, vf), {c, h, w});
  Tensor<T> residual = concat0<T>({nn::dd_conv(x, p.r3), nn::dd_conv(x, p.r5)});
  return nn::conv2d(concat0<T>({attended, residual}), p.fuse);
}

// ---------------------------------------------------------------------------
// FDBA: parameter-free self-attention over the magnitude spectrum with the
// phase passed through untouched, plus a learned frequency residual.
// ---------------------------------------------------------------------------

template <typename T>
struct FdbaParams {
  nn::SigmaParams<T> sigma;   // frequency residual path
  nn::Conv2dParams<T> fuse;   // 1x1, 2C -> C
  std::size_t attention_cap = 4096;

  static FdbaParams init(const FstbConfig& cfg, Rng& rng) {
    FdbaParams p;
    p.sigma = nn::SigmaParams<T>::init(cfg.channels, rng);
    p.fuse = nn::Conv2dParams<T>::init(2 * cfg.channels, cfg.channels, 1, 1, rng);
    p.attention_cap = cfg.attention_cap;
    return p;
  }

  void collect(const std::string& prefix, nn::NamedParams<T>& out) {
    sigma.collect(prefix + ".sigma", out);
    fuse.collect(prefix + ".fuse", out);
  }

  void collect_buffers(const std::string& prefix, nn::NamedParams<T>& out) {
    sigma.collect_buffers(prefix + ".sigma", out);
  }
};

template <typename T>
struct FdbaDebug {
  Tensor<T> attention;       // N x N map, rows sum to 1
  Tensor<T> phase_spectrum;  // the exact phase tensor fed to polar_recombine
};

template <typename T>
Tensor<T> fdba_forward(const Tensor<T>& x, FdbaParams<T>& p, bool training,
                       bool update_stats = true, FdbaDebug<T>* debug = nullptr) {
  if (x.rank() != 3) throw ShapeError("fdba: input must be [C,H,W]");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t n = h * w;
  if (n > p.attention_cap) {
    throw ValueError("fdba: N=" + std::to_string(n) + " exceeds the attention cap " +
                     std::to_string(p.attention_cap) +
                     "; apply the block at a coarser pyramid level");
  }

  spectral::ComplexSpectrum<T> spec = spectral::fft2(x);
  Tensor<T> mag = spectral::magnitude(spec);   // Q_f = K_f = V_f
  Tensor<T> ph = spectral::phase(spec);        // retained untouched

  Tensor<T> mf = reshape(mag, {c, n});
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c)));
  Tensor<T> logits = mul_scalar(matmul(transpose2d(mf), mf), scale);  // N x N
  Tensor<T> attn = softmax(logits, 1);

  Tensor<T> attended = matmul(attn, transpose2d(mf));                   // N x C
  Tensor<T> corrected_mag = reshape(transpose2d(attended), {c, h, w});  // P_f^m

  if (debug) {
    debug->attention = attn;
    debug->phase_spectrum = ph;
  }

  spectral::ComplexSpectrum<T> corrected = spectral::polar_recombine(corrected_mag, ph);
  Tensor<T> freq_feature = spectral::ifft2_real(corrected);  // P_f^f

  spectral::ComplexSpectrum<T> gated = nn::sigma_block(spec, p.sigma, training, update_stats);
  Tensor<T> freq_residual = spectral::ifft2_real(gated);  // P_f^r

  return nn::conv2d(concat0<T>({freq_feature, freq_residual}), p.fuse);
}

// ---------------------------------------------------------------------------
// FSFN: two-stage gated feed-forward interleaving spectral and spatial paths
// ---------------------------------------------------------------------------

template <typename T>
struct FsfnParams {
  nn::SigmaParams<T> sigma1;   // stage-1 frequency gate on C channels
  nn::DDConvParams<T> gate_dd; // stage-1 spatial gate, C -> C (k=3)
  nn::SigmaParams<T> sigma2;   // stage-2 frequency gate on 2C channels
  nn::DDConvParams<T> dd2;     // stage-2 spatial path, 2C -> C (k=3)
  nn::Conv2dParams<T> fuse;    // 1x1, 3C -> C

  static FsfnParams init(const FstbConfig& cfg, Rng& rng) {
    const std::size_t c = cfg.channels, d = cfg.dilation;
    FsfnParams p;
    p.sigma1 = nn::SigmaParams<T>::init(c, rng);
    p.gate_dd = nn::DDConvParams<T>::init(c, c, 3, d, rng);
    p.sigma2 = nn::SigmaParams<T>::init(2 * c, rng);
    p.dd2 = nn::DDConvParams<T>::init(2 * c, c, 3, d, rng);
    p.fuse = nn::Conv2dParams<T>::init(3 * c, c, 1, 1, rng);
    for (T& w : p.fuse.weight.values()) w *= static_cast<T>(cfg.output_gain);
    return p;
  }

  void collect(const std::string& prefix, nn::NamedParams<T>& out) {
    sigma1.collect(prefix + ".sigma1", out);
    gate_dd.collect(prefix + ".gate_dd", out);
    sigma2.collect(prefix + ".sigma2", out);
    dd2.collect(prefix + ".dd2", out);
    fuse.collect(prefix + ".fuse", out);
  }

  void collect_buffers(const std::string& prefix, nn::NamedParams<T>& out) {
    sigma1.collect_buffers(prefix + ".sigma1", out);
    sigma2.collect_buffers(prefix + ".sigma2", out);
  }
};

template <typename T>
Tensor<T> fsfn_forward(const Tensor<T>& x, FsfnParams<T>& p, bool training,
                       bool update_stats = true) {
  if (x.rank() != 3) throw ShapeError("fsfn: input must be [C,H,W]");

  // Stage 1, frequency: S = |sigma(F(P)) (x) F(P)|, gated by GELU(S) (x) S.
  spectral::ComplexSpectrum<T> z = spectral::fft2(x);
  spectral::ComplexSpectrum<T> g1 = nn::sigma_block(z, p.sigma1, training, update_stats);
  Tensor<T> s1 = spectral::magnitude(complex_hadamard(g1, z));
  Tensor<T> p_cf = mul(gelu(s1), s1);

  // Stage 1, spatial: the DD output gates itself.
  Tensor<T> d1 = nn::dd_conv(x, p.gate_dd);
  Tensor<T> p_cs = mul(gelu(d1), d1);

  // Joint feature, 2C channels.
  Tensor<T> joint = concat0<T>({p_cs, p_cf});

  // Stage 2, frequency: gate the joint spectrum, invert, take the modulus.
  spectral::ComplexSpectrum<T> zj = spectral::fft2(joint);
  spectral::ComplexSpectrum<T> g2 = nn::sigma_block(zj, p.sigma2, training, update_stats);
  Tensor<T> freq2 = spectral::magnitude(spectral::ifft2(complex_hadamard(g2, zj)));  // 2C

  // Stage 2, spatial: depthwise over the joint feature, pointwise 2C -> C.
  Tensor<T> spat2 = nn::dd_conv(joint, p.dd2);  // C

  return nn::conv2d(concat0<T>({freq2, spat2}), p.fuse);
}

// ---------------------------------------------------------------------------
// Full block and cascade
// ---------------------------------------------------------------------------

template <typename T>
struct FstbParams {
  SdcaParams<T> sdca;
  FdbaParams<T> fdba;
  FsfnParams<T> fsfn;
  nn::Conv2dParams<T> combine;  // 1x1, 2C -> C merging P_s and P_f before FSFN

  static FstbParams init(const FstbConfig& cfg, Rng& rng) {
    FstbParams p;
    p.sdca = SdcaParams<T>::init(cfg, rng);
    p.fdba = FdbaParams<T>::init(cfg, rng);
    p.fsfn = FsfnParams<T>::init(cfg, rng);
    p.combine = nn::Conv2dParams<T>::init(2 * cfg.channels, cfg.channels, 1, 1, rng);
    return p;
  }

  std::size_t channels() const { return combine.out_channels(); }

  void collect(const std::string& prefix, nn::NamedParams<T>& out) {
    sdca.collect(prefix + ".sdca", out);
    fdba.collect(prefix + ".fdba", out);
    fsfn.collect(prefix + ".fsfn", out);
    combine.collect(prefix + ".combine", out);
  }

  void collect_buffers(const std::string& prefix, nn::NamedParams<T>& out) {
    fdba.collect_buffers(prefix + ".fdba", out);
    fsfn.collect_buffers(prefix + ".fsfn", out);
  }
};

/// SDCA and FDBA run in parallel on the block input, are merged by a 1x1
/// conv, refined by FSFN, and a block-level residual restores the input path.
/// Input and output shapes are identical.
template <typename T>
Tensor<T> fstb_forward(const Tensor<T>& x, FstbParams<T>& p, bool training,
                       bool update_stats = true) {
  Tensor<T> p_s = sdca_forward(x, p.sdca);
  Tensor<T> p_f = fdba_forward(x, p.fdba, training, update_stats);
  Tensor<T> merged = nn::conv2d(concat0<T>({p_s, p_f}), p.combine);
  Tensor<T> refined = fsfn_forward(merged, p.fsfn, training, update_stats);
  return add(refined, x);
}

/// Cascade of N independent blocks; returns every intermediate F^1..F^N
/// (each consistent-loss stage needs them all).
template <typename T>
std::vector<Tensor<T>> fstb_stack(const Tensor<T>& f0, std::vector<FstbParams<T>>& blocks,
                                  bool training, bool update_stats = true) {
  if (blocks.empty()) throw ValueError("fstb_stack: need at least one block");
  std::vector<Tensor<T>> outputs;
  outputs.reserve(blocks.size());
  Tensor<T> cur = f0;
  for (auto& block : blocks) {
    cur = fstb_forward(cur, block, training, update_stats);
    outputs.push_back(cur);
  }
  return outputs;
}

}  // namespace foam::fstb
