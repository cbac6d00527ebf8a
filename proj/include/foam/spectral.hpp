#pragma once

#include <atomic>
#include <cmath>
#include <numbers>
#include <vector>

#include "foam/tensor.hpp"

namespace foam::spectral {

/// Per-channel complex H x W frequency grid; real and imaginary parts are
/// ordinary (optionally gradient-tracked) tensors of shape [C,H,W].
template <typename T>
struct ComplexSpectrum {
  Tensor<T> re;
  Tensor<T> im;

  std::size_t channels() const { return re.shape()[0]; }
  std::size_t height() const { return re.shape()[1]; }
  std::size_t width() const { return re.shape()[2]; }
};

struct BandEnergyReport {
  std::vector<double> edges;      // normalized radial frequency cutoffs
  std::vector<double> fractions;  // per-band energy share, sums to 1
  double total_energy = 0.0;
};

namespace fftcore {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Twiddle factors e^{sign * j2pi k/n} for k < n/2, laid out stage by stage
/// (len = 2, 4, ..., n). Computed once per axis length and reused across all
/// rows, columns, and channels of a transform.
struct TwiddleTable {
  std::vector<double> re, im;  // concatenated per-stage tables

  TwiddleTable(std::size_t n, int sign) {
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2;
      for (std::size_t k = 0; k < half; ++k) {
        const double ang =
            sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
        re.push_back(std::cos(ang));
        im.push_back(std::sin(ang));
      }
    }
  }
};

/// In-place radix-2 FFT over strided complex data held in double buffers.
/// The table must have been built for this n and kernel sign.
inline void fft1d(double* re, double* im, std::size_t n, std::size_t stride,
                  const TwiddleTable& tw) {
  if (n == 1) return;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j |= bit;
    if (i < j) {
      std::swap(re[i * stride], re[j * stride]);
      std::swap(im[i * stride], im[j * stride]);
    }
  }
  std::size_t table_base = 0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const double wr = tw.re[table_base + k], wi = tw.im[table_base + k];
        const std::size_t ia = (i + k) * stride;
        const std::size_t ib = (i + k + half) * stride;
        const double tr = re[ib] * wr - im[ib] * wi;
        const double ti = re[ib] * wi + im[ib] * wr;
        re[ib] = re[ia] - tr;
        im[ib] = im[ia] - ti;
        re[ia] += tr;
        im[ia] += ti;
      }
    }
    table_base += half;
  }
}

/// Literal double-sum DFT of one H x W plane.
inline void naive2d(const std::vector<double>& re_in, const std::vector<double>& im_in,
                    std::vector<double>& re_out, std::vector<double>& im_out, std::size_t h,
                    std::size_t w, int sign) {
  re_out.assign(h * w, 0.0);
  im_out.assign(h * w, 0.0);
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      double sr = 0.0, si = 0.0;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double ang = sign * 2.0 * std::numbers::pi *
                             (static_cast<double>(u) * static_cast<double>(y) / static_cast<double>(h) +
                              static_cast<double>(v) * static_cast<double>(x) / static_cast<double>(w));
          const double cr = std::cos(ang), ci = std::sin(ang);
          const double xr = re_in[y * w + x], xi = im_in[y * w + x];
          sr += xr * cr - xi * ci;
          si += xr * ci + xi * cr;
        }
      }
      re_out[u * w + v] = sr;
      im_out[u * w + v] = si;
    }
  }
}

/// Per-channel 2D transform of [C,H,W] data. Power-of-two extents use the
/// radix-2 fast path; anything else falls back to the naive double sum.
template <typename T>
void transform2d(const std::vector<T>& re_in, const std::vector<T>& im_in, std::vector<T>& re_out,
                 std::vector<T>& im_out, std::size_t c, std::size_t h, std::size_t w, int sign,
                 double scale) {
  const std::size_t plane = h * w;
  re_out.resize(c * plane);
  im_out.resize(c * plane);
  const bool fast = is_pow2(h) && is_pow2(w);
  if (!fast) {
    static std::atomic<bool> notified{false};
    if (!notified.exchange(true)) {
      log_notice("fft2: non-power-of-two extents, using naive DFT fallback "
                 "(further notices suppressed)");
    }
  }
  std::vector<double> re(plane), im(plane), re2, im2;
  const TwiddleTable tw_row(fast ? w : 0, sign);
  const TwiddleTable tw_col(fast ? h : 0, sign);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      re[i] = static_cast<double>(re_in[ch * plane + i]);
      im[i] = static_cast<double>(im_in[ch * plane + i]);
    }
    if (fast) {
      for (std::size_t row = 0; row < h; ++row)
        fft1d(re.data() + row * w, im.data() + row * w, w, 1, tw_row);
      for (std::size_t col = 0; col < w; ++col)
        fft1d(re.data() + col, im.data() + col, h, w, tw_col);
    } else {
      naive2d(re, im, re2, im2, h, w, sign);
      re.swap(re2);
      im.swap(im2);
    }
    for (std::size_t i = 0; i < plane; ++i) {
      re_out[ch * plane + i] = static_cast<T>(re[i] * scale);
      im_out[ch * plane + i] = static_cast<T>(im[i] * scale);
    }
  }
}

}  // namespace fftcore

namespace detail {

template <typename T>
void require_chw(const Tensor<T>& x, const char* op) {
  if (x.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected [C,H,W], got " + shape_str(x.shape()));
  }
}

// Shared by fft2/ifft2: a [2,C,H,W] "pair" tensor holding (re, im) planes.
template <typename T>
ComplexSpectrum<T> split_pair(const Tensor<T>& pair) {
  const Shape& s = pair.shape();
  const Shape chw{s[1], s[2], s[3]};
  ComplexSpectrum<T> out;
  out.re = reshape(narrow0(pair, 0, 1), chw);
  out.im = reshape(narrow0(pair, 1, 1), chw);
  return out;
}

}  // namespace detail

/// Unnormalized forward 2D DFT applied per channel (fast path for
/// power-of-two extents). Differentiable with respect to the input.
template <typename T>
ComplexSpectrum<T> fft2(const Tensor<T>& x) {
  detail::require_chw(x, "fft2");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t plane = c * h * w;
  std::vector<T> zeros(plane, T(0));
  std::vector<T> re, im;
  fftcore::transform2d(x.values(), zeros, re, im, c, h, w, -1, 1.0);
  std::vector<T> pair;
  pair.reserve(2 * plane);
  pair.insert(pair.end(), re.begin(), re.end());
  pair.insert(pair.end(), im.begin(), im.end());
  Tensor<T> result = foam::detail::make_op<T>(
      {2, c, h, w}, std::move(pair), "fft2", {x},
      [c, h, w, plane](foam::detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        // Adjoint of the forward kernel: x_grad = Re(W conj(g)), W symmetric.
        std::vector<T> gre(self.grad.begin(), self.grad.begin() + static_cast<std::ptrdiff_t>(plane));
        std::vector<T> gim(plane);
        for (std::size_t i = 0; i < plane; ++i) gim[i] = -self.grad[plane + i];
        std::vector<T> are, aim;
        fftcore::transform2d(gre, gim, are, aim, c, h, w, -1, 1.0);
        for (std::size_t i = 0; i < plane; ++i) p.grad[i] += are[i];
      });
  return detail::split_pair(result);
}

/// Inverse 2D DFT with the 1/(HW) factor, per channel. Returns the full
/// complex result; see ifft2_real for the real-part convenience.
template <typename T>
ComplexSpectrum<T> ifft2(const ComplexSpectrum<T>& s) {
  detail::require_chw(s.re, "ifft2");
  if (s.re.shape() != s.im.shape()) {
    throw ShapeError("ifft2: real/imag shapes differ: " + shape_str(s.re.shape()) + " vs " +
                     shape_str(s.im.shape()));
  }
  const std::size_t c = s.re.shape()[0], h = s.re.shape()[1], w = s.re.shape()[2];
  const std::size_t plane = c * h * w;
  const double scale = 1.0 / (static_cast<double>(h) * static_cast<double>(w));
  std::vector<T> re, im;
  fftcore::transform2d(s.re.values(), s.im.values(), re, im, c, h, w, +1, scale);
  std::vector<T> pair;
  pair.reserve(2 * plane);
  pair.insert(pair.end(), re.begin(), re.end());
  pair.insert(pair.end(), im.begin(), im.end());
  Tensor<T> result = foam::detail::make_op<T>(
      {2, c, h, w}, std::move(pair), "ifft2", {s.re, s.im},
      [c, h, w, plane, scale](foam::detail::TensorNode<T>& self) {
        auto& pre = *self.parents[0];
        auto& pim = *self.parents[1];
        if (!pre.requires_grad && !pim.requires_grad) return;
        // Adjoint of the inverse: grad = conj(V conj(g)), V symmetric.
        std::vector<T> gre(self.grad.begin(), self.grad.begin() + static_cast<std::ptrdiff_t>(plane));
        std::vector<T> gim(plane);
        for (std::size_t i = 0; i < plane; ++i) gim[i] = -self.grad[plane + i];
        std::vector<T> are, aim;
        fftcore::transform2d(gre, gim, are, aim, c, h, w, +1, scale);
        for (std::size_t i = 0; i < plane; ++i) {
          foam::detail::acc_grad(pre, i, are[i]);
          foam::detail::acc_grad(pim, i, -aim[i]);
        }
      });
  return detail::split_pair(result);
}

/// Real part of the inverse transform (for spectra known to be
/// conjugate-symmetric up to numerical noise).
template <typename T>
Tensor<T> ifft2_real(const ComplexSpectrum<T>& s) {
  return ifft2(s).re;
}

/// Testing oracle: literal evaluation of the forward double sum. No graph.
template <typename T>
ComplexSpectrum<T> dft2_naive(const Tensor<T>& x) {
  detail::require_chw(x, "dft2_naive");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t plane = h * w;
  std::vector<double> re_in(plane), im_in(plane, 0.0), re_out, im_out;
  std::vector<T> re(c * plane), im(c * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i)
      re_in[i] = static_cast<double>(x.values()[ch * plane + i]);
    fftcore::naive2d(re_in, im_in, re_out, im_out, h, w, -1);
    for (std::size_t i = 0; i < plane; ++i) {
      re[ch * plane + i] = static_cast<T>(re_out[i]);
      im[ch * plane + i] = static_cast<T>(im_out[i]);
    }
  }
  return {Tensor<T>::from_data({c, h, w}, std::move(re)),
          Tensor<T>::from_data({c, h, w}, std::move(im))};
}

/// Testing oracle: literal evaluation of the inverse double sum. No graph.
template <typename T>
ComplexSpectrum<T> idft2_naive(const ComplexSpectrum<T>& s) {
  detail::require_chw(s.re, "idft2_naive");
  const std::size_t c = s.re.shape()[0], h = s.re.shape()[1], w = s.re.shape()[2];
  const std::size_t plane = h * w;
  const double scale = 1.0 / (static_cast<double>(h) * static_cast<double>(w));
  std::vector<double> re_in(plane), im_in(plane), re_out, im_out;
  std::vector<T> re(c * plane), im(c * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      re_in[i] = static_cast<double>(s.re.values()[ch * plane + i]);
      im_in[i] = static_cast<double>(s.im.values()[ch * plane + i]);
    }
    fftcore::naive2d(re_in, im_in, re_out, im_out, h, w, +1);
    for (std::size_t i = 0; i < plane; ++i) {
      re[ch * plane + i] = static_cast<T>(re_out[i] * scale);
      im[ch * plane + i] = static_cast<T>(im_out[i] * scale);
    }
  }
  return {Tensor<T>::from_data({c, h, w}, std::move(re)),
          Tensor<T>::from_data({c, h, w}, std::move(im))};
}

/// Elementwise modulus sqrt(R^2 + I^2). The forward value is exact; the
/// gradient is smoothed with eps = 1e-12 to stay defined at R = I = 0.
template <typename T>
Tensor<T> magnitude(const ComplexSpectrum<T>& s) {
  if (s.re.shape() != s.im.shape()) {
    throw ShapeError("magnitude: real/imag shapes differ");
  }
  const auto& rv = s.re.values();
  const auto& iv = s.im.values();
  std::vector<T> out(rv.size());
  for (std::size_t i = 0; i < rv.size(); ++i) {
    out[i] = static_cast<T>(std::sqrt(static_cast<double>(rv[i]) * rv[i] +
                                      static_cast<double>(iv[i]) * iv[i]));
  }
  return foam::detail::make_op<T>(
      s.re.shape(), std::move(out), "magnitude", {s.re, s.im},
      [](foam::detail::TensorNode<T>& self) {
        auto& pre = *self.parents[0];
        auto& pim = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double r = static_cast<double>(pre.data[i]);
          const double im = static_cast<double>(pim.data[i]);
          const double m = std::sqrt(r * r + im * im + 1e-12);
          foam::detail::acc_grad(pre, i, static_cast<T>(self.grad[i] * (r / m)));
          foam::detail::acc_grad(pim, i, static_cast<T>(self.grad[i] * (im / m)));
        }
      });
}

/// Four-quadrant phase in (-pi, pi], with phase(0, 0) defined as 0.
template <typename T>
Tensor<T> phase(const ComplexSpectrum<T>& s) {
  if (s.re.shape() != s.im.shape()) {
    throw ShapeError("phase: real/imag shapes differ");
  }
  const auto& rv = s.re.values();
  const auto& iv = s.im.values();
  std::vector<T> out(rv.size());
  for (std::size_t i = 0; i < rv.size(); ++i) {
    out[i] = (rv[i] == T(0) && iv[i] == T(0))
                 ? T(0)
                 : static_cast<T>(std::atan2(static_cast<double>(iv[i]), static_cast<double>(rv[i])));
  }
  return foam::detail::make_op<T>(
      s.re.shape(), std::move(out), "phase", {s.re, s.im},
      [](foam::detail::TensorNode<T>& self) {
        auto& pre = *self.parents[0];
        auto& pim = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double r = static_cast<double>(pre.data[i]);
          const double im = static_cast<double>(pim.data[i]);
          const double d = r * r + im * im + 1e-12;
          foam::detail::acc_grad(pre, i, static_cast<T>(self.grad[i] * (-im / d)));
          foam::detail::acc_grad(pim, i, static_cast<T>(self.grad[i] * (r / d)));
        }
      });
}

/// R = m cos p, I = m sin p; differentiable in both inputs.
template <typename T>
ComplexSpectrum<T> polar_recombine(const Tensor<T>& m, const Tensor<T>& p) {
  if (m.shape() != p.shape()) {
    throw ShapeError("polar_recombine: magnitude " + shape_str(m.shape()) + " vs phase " +
                     shape_str(p.shape()));
  }
  return {mul(m, cos_(p)), mul(m, sin_(p))};
}

/// Swap quadrants so the DC bin sits at the center; visualization helper.
/// Output tensors are plain leaves (no gradient history).
template <typename T>
ComplexSpectrum<T> fftshift(const ComplexSpectrum<T>& s) {
  detail::require_chw(s.re, "fftshift");
  const std::size_t c = s.re.shape()[0], h = s.re.shape()[1], w = s.re.shape()[2];
  auto shift = [&](const std::vector<T>& in) {
    std::vector<T> out(in.size());
    const std::size_t dh = h / 2, dw = w / 2;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v)
          out[(ch * h + (u + dh) % h) * w + (v + dw) % w] = in[(ch * h + u) * w + v];
    return out;
  };
  return {Tensor<T>::from_data(s.re.shape(), shift(s.re.values())),
          Tensor<T>::from_data(s.im.shape(), shift(s.im.values()))};
}

/// Partition spectral energy (sum of squared magnitudes) by normalized radial
/// frequency r = sqrt((fu/H)^2 + (fv/W)^2), r in [0, sqrt(2)/2]. Band k
/// collects bins with edges[k-1] <= r < edges[k]; the last band is open-ended.
template <typename T>
BandEnergyReport band_energy(const ComplexSpectrum<T>& s, const std::vector<double>& edges) {
  detail::require_chw(s.re, "band_energy");
  constexpr double max_r = 0.70710678118654752 + 1e-12;
  if (edges.empty()) throw ValueError("band_energy: need at least one edge");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (edges[i] <= 0.0 || edges[i] > max_r || (i > 0 && edges[i] <= edges[i - 1])) {
      throw ValueError("band_energy: edges must be strictly increasing in (0, sqrt(2)/2]");
    }
  }
  const std::size_t c = s.re.shape()[0], h = s.re.shape()[1], w = s.re.shape()[2];
  const std::size_t bands = edges.size() + 1;
  std::vector<double> energy(bands, 0.0);
  const auto& rv = s.re.values();
  const auto& iv = s.im.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < h; ++u) {
      const double fu = (u <= h / 2 ? static_cast<double>(u) : static_cast<double>(u) - static_cast<double>(h)) /
                        static_cast<double>(h);
      for (std::size_t v = 0; v < w; ++v) {
        const double fv = (v <= w / 2 ? static_cast<double>(v) : static_cast<double>(v) - static_cast<double>(w)) /
                          static_cast<double>(w);
        const double r = std::sqrt(fu * fu + fv * fv);
        std::size_t band = bands - 1;
        for (std::size_t k = 0; k < edges.size(); ++k) {
          if (r < edges[k]) {
            band = k;
            break;
          }
        }
        const std::size_t idx = (ch * h + u) * w + v;
        const double m2 = static_cast<double>(rv[idx]) * rv[idx] + static_cast<double>(iv[idx]) * iv[idx];
        energy[band] += m2;
      }
    }
  }
  BandEnergyReport report;
  report.edges = edges;
  report.total_energy = 0.0;
  for (double e : energy) report.total_energy += e;
  report.fractions.assign(bands, 0.0);
  if (report.total_energy > 0.0) {
    for (std::size_t k = 0; k < bands; ++k) report.fractions[k] = energy[k] / report.total_energy;
  } else {
    report.fractions[0] = 1.0;  // degenerate all-zero spectrum
  }
  return report;
}

/// Default low/mid/high band split used by the CLI and tests.
inline std::vector<double> default_band_edges() { return {0.0625, 0.25}; }

}  // namespace foam::spectral
