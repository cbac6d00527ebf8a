#include <doctest.h>

#include <cmath>
#include <numbers>

#include "foam/spectral.hpp"
#include "test_helpers.hpp"

using namespace foam;
namespace sp = foam::spectral;
using foam::test::weighted_sum;

namespace {

TensorD rand_image(Shape shape, std::uint64_t seed, bool rg = false) {
  Rng rng(seed);
  return TensorD::uniform(std::move(shape), 0.0, 1.0, rng, rg);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TensorD circular_shift(const TensorD& x, std::size_t dy, std::size_t dx) {
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<double> out(x.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[(ch * h + (i + dy) % h) * w + (j + dx) % w] = x.values()[(ch * h + i) * w + j];
  return TensorD::from_data(x.shape(), std::move(out));
}

}  // namespace

TEST_CASE("fft2 trivial spectra") {
  // constant image: single DC bin of H*W*v
  const double v = 0.73;
  TensorD constant = TensorD::filled({1, 4, 4}, v);
  auto s = sp::fft2(constant);
  CHECK(s.re.values()[0] == doctest::Approx(16.0 * v).epsilon(1e-12));
  for (std::size_t i = 1; i < 16; ++i) {
    CHECK(std::abs(s.re.values()[i]) < 1e-10);
    CHECK(std::abs(s.im.values()[i]) < 1e-10);
  }

  // unit impulse at (0,0): flat spectrum of ones
  TensorD impulse = TensorD::zeros({1, 4, 4});
  impulse.values()[0] = 1.0;
  auto si = sp::fft2(impulse);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(si.re.values()[i] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(si.im.values()[i]) < 1e-12);
  }
}

TEST_CASE("fft2 equals the naive DFT oracle on all sizes 2..16") {
  for (std::size_t h = 2; h <= 16; ++h) {
    for (std::size_t w = 2; w <= 16; ++w) {
      TensorD x = rand_image({1, h, w}, 10000 + h * 100 + w);
      auto fast = sp::fft2(x);
      auto naive = sp::dft2_naive(x);
      CHECK(max_abs_diff(fast.re.values(), naive.re.values()) < 1e-10);
      CHECK(max_abs_diff(fast.im.values(), naive.im.values()) < 1e-10);
    }
  }
}

TEST_CASE("ifft2 roundtrip and naive inverse agreement") {
  TensorD x = rand_image({2, 8, 8}, 21);
  auto back = sp::ifft2(sp::fft2(x));
  CHECK(max_abs_diff(back.re.values(), x.values()) < 1e-10);
  for (double v : back.im.values()) CHECK(std::abs(v) < 1e-10);

  // float roundtrip within 1e-5
  Rng rngf(22);
  TensorF xf = TensorF::uniform({1, 16, 16}, 0.0f, 1.0f, rngf);
  auto backf = sp::ifft2(sp::fft2(xf));
  for (std::size_t i = 0; i < xf.size(); ++i)
    CHECK(std::abs(backf.re.values()[i] - xf.values()[i]) < 1e-5f);

  // DC-only spectrum of H*W inverts to an all-ones image
  sp::ComplexSpectrum<double> dc{TensorD::zeros({1, 4, 4}), TensorD::zeros({1, 4, 4})};
  dc.re.values()[0] = 16.0;
  auto ones = sp::ifft2(dc);
  for (double v : ones.re.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  // random complex spectrum: ifft2 vs the naive inverse sum
  Rng rng(23);
  sp::ComplexSpectrum<double> s{TensorD::randn({1, 8, 8}, rng), TensorD::randn({1, 8, 8}, rng)};
  auto a = sp::ifft2(s);
  auto b = sp::idft2_naive(s);
  CHECK(max_abs_diff(a.re.values(), b.re.values()) < 1e-10);
  CHECK(max_abs_diff(a.im.values(), b.im.values()) < 1e-10);
}

TEST_CASE("linearity, Parseval, conjugate symmetry") {
  TensorD x = rand_image({1, 8, 8}, 31);
  TensorD y = rand_image({1, 8, 8}, 32);
  const double a = 1.7, b = -0.4;

  auto sx = sp::fft2(x);
  auto sy = sp::fft2(y);
  auto sxy = sp::fft2(add(mul_scalar(x, a), mul_scalar(y, b)));
  for (std::size_t i = 0; i < sx.re.size(); ++i) {
    const double er = a * sx.re.values()[i] + b * sy.re.values()[i];
    const double ei = a * sx.im.values()[i] + b * sy.im.values()[i];
    CHECK(foam::test::rel_err(sxy.re.values()[i], er) < 1e-6);
    CHECK(foam::test::rel_err(sxy.im.values()[i], ei) < 1e-6);
  }

  // Parseval: sum x^2 == (1/HW) sum |F|^2
  double spatial = 0.0;
  for (double v : x.values()) spatial += v * v;
  double spectral_e = 0.0;
  for (std::size_t i = 0; i < sx.re.size(); ++i)
    spectral_e += sx.re.values()[i] * sx.re.values()[i] + sx.im.values()[i] * sx.im.values()[i];
  spectral_e /= 64.0;
  CHECK(foam::test::rel_err(spatial, spectral_e) < 1e-5);

  // F(u,v) = conj(F((H-u) mod H, (W-v) mod W)) for real input
  const std::size_t h = 8, w = 8;
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      const std::size_t mu = (h - u) % h, mv = (w - v) % w;
      CHECK(std::abs(sx.re.values()[u * w + v] - sx.re.values()[mu * w + mv]) < 1e-9);
      CHECK(std::abs(sx.im.values()[u * w + v] + sx.im.values()[mu * w + mv]) < 1e-9);
    }
  }
}

TEST_CASE("magnitude and phase basics") {
  sp::ComplexSpectrum<double> s{TensorD::from_data({1, 1, 2}, {3.0, 1.0}),
                                TensorD::from_data({1, 1, 2}, {4.0, 0.0})};
  TensorD m = sp::magnitude(s);
  CHECK(m.values()[0] == doctest::Approx(5.0).epsilon(1e-12));

  sp::ComplexSpectrum<double> axes{TensorD::from_data({1, 1, 3}, {1.0, 0.0, 0.0}),
                                   TensorD::from_data({1, 1, 3}, {0.0, 1.0, 0.0})};
  TensorD p = sp::phase(axes);
  CHECK(p.values()[0] == doctest::Approx(0.0));
  CHECK(p.values()[1] == doctest::Approx(std::numbers::pi / 2).epsilon(1e-12));
  CHECK(p.values()[2] == doctest::Approx(0.0));  // phase(0,0) := 0

  // nonnegative constant image: all energy in the DC magnitude bin
  TensorD constant = TensorD::filled({1, 4, 4}, 0.5);
  TensorD mc = sp::magnitude(sp::fft2(constant));
  CHECK(mc.values()[0] == doctest::Approx(8.0).epsilon(1e-9));
  for (std::size_t i = 1; i < 16; ++i) CHECK(std::abs(mc.values()[i]) < 1e-10);
}

TEST_CASE("shift theorem: magnitude invariant, phase not") {
  TensorD x = rand_image({1, 8, 8}, 41);
  TensorD xs = circular_shift(x, 3, 5);
  TensorD m0 = sp::magnitude(sp::fft2(x));
  TensorD m1 = sp::magnitude(sp::fft2(xs));
  for (std::size_t i = 0; i < m0.size(); ++i) CHECK(std::abs(m0.values()[i] - m1.values()[i]) < 1e-5);

  TensorD p0 = sp::phase(sp::fft2(x));
  TensorD p1 = sp::phase(sp::fft2(xs));
  double max_delta = 0.0;
  for (std::size_t i = 0; i < p0.size(); ++i)
    max_delta = std::max(max_delta, std::abs(p0.values()[i] - p1.values()[i]));
  CHECK(max_delta > 1e-3);
}

TEST_CASE("polar_recombine inverts the decomposition") {
  TensorD x = rand_image({2, 8, 8}, 51);
  auto s = sp::fft2(x);
  auto back = sp::polar_recombine(sp::magnitude(s), sp::phase(s));
  for (std::size_t i = 0; i < s.re.size(); ++i) {
    CHECK(std::abs(back.re.values()[i] - s.re.values()[i]) < 1e-6);
    CHECK(std::abs(back.im.values()[i] - s.im.values()[i]) < 1e-6);
  }
}

TEST_CASE("band_energy partitions and edge validation") {
  TensorD constant = TensorD::filled({1, 8, 8}, 0.9);
  auto report = sp::band_energy(sp::fft2(constant), sp::default_band_edges());
  CHECK(report.fractions.size() == 3);
  CHECK(report.fractions[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(report.fractions[1] == doctest::Approx(0.0));
  CHECK(report.fractions[2] == doctest::Approx(0.0));
  double total = 0.0;
  for (double f : report.fractions) total += f;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

  auto s = sp::fft2(constant);
  CHECK_THROWS_AS(sp::band_energy(s, std::vector<double>{}), ValueError);
  CHECK_THROWS_AS(sp::band_energy(s, {0.25, 0.1}), ValueError);
  CHECK_THROWS_AS(sp::band_energy(s, {0.0}), ValueError);
  CHECK_THROWS_AS(sp::band_energy(s, {0.8}), ValueError);
}

TEST_CASE("band_energy on white noise matches bin-count proportions") {
  // Edges chosen to split the grid into three roughly equal bin populations;
  // the oracle below counts the actual bins with the same radius rule.
  const std::vector<double> edges{0.3257, 0.4607};
  const std::size_t h = 16, w = 16;

  std::vector<double> expected(3, 0.0);
  for (std::size_t u = 0; u < h; ++u) {
    const double fu = (u <= h / 2 ? double(u) : double(u) - double(h)) / double(h);
    for (std::size_t v = 0; v < w; ++v) {
      const double fv = (v <= w / 2 ? double(v) : double(v) - double(w)) / double(w);
      const double r = std::sqrt(fu * fu + fv * fv);
      expected[r < edges[0] ? 0 : (r < edges[1] ? 1 : 2)] += 1.0;
    }
  }
  for (double& e : expected) e /= double(h * w);

  std::vector<double> mean_fraction(3, 0.0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(7000 + seed);
    TensorD noise = TensorD::randn({1, h, w}, rng);
    auto rep = sp::band_energy(sp::fft2(noise), edges);
    for (std::size_t k = 0; k < 3; ++k) mean_fraction[k] += rep.fractions[k];
  }
  for (std::size_t k = 0; k < 3; ++k) {
    mean_fraction[k] /= 100.0;
    CHECK(std::abs(mean_fraction[k] - expected[k]) / expected[k] < 0.2);
  }
}

TEST_CASE("fftshift centers the DC bin") {
  TensorD constant = TensorD::filled({1, 8, 8}, 1.0);
  auto shifted = sp::fftshift(sp::fft2(constant));
  CHECK(shifted.re.values()[4 * 8 + 4] == doctest::Approx(64.0));
  CHECK(shifted.re.values()[0] == doctest::Approx(0.0));
}

TEST_CASE("spectral ops are differentiable (gradcheck)") {
  Rng rng(61);
  TensorD x = TensorD::uniform({1, 4, 4}, 0.1, 1.0, rng, true);

  auto f_fft = [&]() {
    auto s = sp::fft2(x);
    return add(weighted_sum(s.re, 11), weighted_sum(s.im, 12));
  };
  CHECK(gradcheck<double>(f_fft, {{"x", x}}, 1e-3).pass);

  auto f_mag = [&]() { return weighted_sum(sp::magnitude(sp::fft2(x)), 13); };
  CHECK(gradcheck<double>(f_mag, {{"x", x}}, 1e-3).pass);

  auto f_phase = [&]() { return weighted_sum(sp::phase(sp::fft2(x)), 14); };
  CHECK(gradcheck<double>(f_phase, {{"x", x}}, 1e-3).pass);

  auto f_chain = [&]() {
    auto s = sp::fft2(x);
    auto recombined = sp::polar_recombine(sp::magnitude(s), sp::phase(s));
    return weighted_sum(sp::ifft2_real(recombined), 15);
  };
  CHECK(gradcheck<double>(f_chain, {{"x", x}}, 1e-3).pass);

  // ifft2 as a standalone op on a free complex pair
  TensorD re = TensorD::uniform({1, 4, 4}, -1.0, 1.0, rng, true);
  TensorD im = TensorD::uniform({1, 4, 4}, -1.0, 1.0, rng, true);
  auto f_ifft = [&]() {
    auto out = sp::ifft2(sp::ComplexSpectrum<double>{re, im});
    return add(weighted_sum(out.re, 16), weighted_sum(out.im, 17));
  };
  CHECK(gradcheck<double>(f_ifft, {{"re", re}, {"im", im}}, 1e-3).pass);
}
