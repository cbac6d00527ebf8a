#include <doctest.h>

#include <cmath>

#include "foam/fstb.hpp"
#include "naive_fstb.hpp"
#include "test_helpers.hpp"

using namespace foam;
namespace fb = foam::fstb;
using foam::test::weighted_sum;

namespace {

TensorD rand_input(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return TensorD::uniform(std::move(shape), -1.0, 1.0, rng);
}

fb::FstbConfig small_cfg(std::size_t channels) {
  fb::FstbConfig cfg;
  cfg.channels = channels;
  cfg.dilation = 2;
  return cfg;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("sdca: shape, attention rows, odd channel count rejected") {
  Rng rng(1);
  auto params = fb::SdcaParams<double>::init(small_cfg(8), rng);
  TensorD x = rand_input({8, 16, 16}, 2);
  fb::SdcaDebug<double> dbg;
  TensorD out = fb::sdca_forward(x, params, &dbg);
  CHECK(out.shape() == x.shape());
  CHECK(dbg.attention.shape() == Shape{8, 8});
  for (std::size_t i = 0; i < 8; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 8; ++j) row += dbg.attention.values()[i * 8 + j];
    CHECK(std::abs(row - 1.0) < 1e-6);
  }
  CHECK_THROWS_AS(fb::sdca_forward(rand_input({3, 4, 4}, 3), params), ValueError);  // odd C
  CHECK_THROWS_AS(fb::sdca_forward(rand_input({6, 4, 4}, 3), params), ShapeError);  // wrong C

  fb::FstbConfig bad = small_cfg(5);
  CHECK_THROWS_AS(fb::SdcaParams<double>::init(bad, rng), ValueError);
}

TEST_CASE("sdca matches the straight-line oracle on 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    auto params = fb::SdcaParams<double>::init(small_cfg(4), rng);
    TensorD x = rand_input({4, 8, 8}, 200 + seed);
    TensorD got = fb::sdca_forward(x, params);
    auto want = foam::test::naive::sdca(foam::test::naive::from_tensor(x), params);
    CHECK(max_abs_diff(got.values(), want.v) < 1e-6);
  }
}

TEST_CASE("fdba: shape, phase passthrough, attention cap") {
  Rng rng(11);
  auto params = fb::FdbaParams<double>::init(small_cfg(4), rng);
  TensorD x = rand_input({4, 8, 8}, 12);
  fb::FdbaDebug<double> dbg;
  TensorD out = fb::fdba_forward(x, params, /*training=*/true, /*update_stats=*/false, &dbg);
  CHECK(out.shape() == x.shape());
  CHECK(dbg.attention.shape() == Shape{64, 64});
  for (std::size_t i = 0; i < 64; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 64; ++j) row += dbg.attention.values()[i * 64 + j];
    CHECK(std::abs(row - 1.0) < 1e-6);
  }

  // the phase used for recombination is bitwise the phase of fft2(input)
  TensorD independent_phase = spectral::phase(spectral::fft2(x));
  CHECK(dbg.phase_spectrum.values() == independent_phase.values());

  auto capped = params;
  capped.attention_cap = 16;
  CHECK_THROWS_WITH_AS(fb::fdba_forward(x, capped, true), doctest::Contains("cap"), ValueError);
}

TEST_CASE("fdba matches the straight-line oracle on 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    auto params = fb::FdbaParams<double>::init(small_cfg(4), rng);
    TensorD x = rand_input({4, 8, 8}, 400 + seed);
    TensorD got = fb::fdba_forward(x, params, /*training=*/true, /*update_stats=*/false);
    auto want = foam::test::naive::fdba(foam::test::naive::from_tensor(x), params);
    CHECK(max_abs_diff(got.values(), want.v) < 1e-6);
  }
}

TEST_CASE("fsfn: shape, zero-input smoke, oracle agreement") {
  Rng rng(21);
  auto params = fb::FsfnParams<double>::init(small_cfg(4), rng);
  TensorD x = rand_input({4, 8, 8}, 22);
  TensorD out = fb::fsfn_forward(x, params, true, false);
  CHECK(out.shape() == x.shape());

  // zero input with zero-initialized convolutions stays finite
  auto zero_params = fb::FsfnParams<double>::init(small_cfg(4), rng);
  auto zero_fill = [](TensorD& t) { std::fill(t.values().begin(), t.values().end(), 0.0); };
  nn::NamedParams<double> named;
  zero_params.collect("z", named);
  for (auto& [name, t] : named) zero_fill(t);
  TensorD zout = fb::fsfn_forward(TensorD::zeros({4, 8, 8}), zero_params, true, false);
  for (double v : zout.values()) CHECK(std::isfinite(v));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng prng(500 + seed);
    auto p = fb::FsfnParams<double>::init(small_cfg(4), prng);
    TensorD in = rand_input({4, 8, 8}, 600 + seed);
    TensorD got = fb::fsfn_forward(in, p, true, false);
    auto want = foam::test::naive::fsfn(foam::test::naive::from_tensor(in), p);
    CHECK(max_abs_diff(got.values(), want.v) < 1e-6);
  }
}

TEST_CASE("fstb_forward: shape preservation and oracle agreement") {
  Rng rng(31);
  auto params = fb::FstbParams<double>::init(small_cfg(4), rng);
  for (std::size_t side : {8, 16, 32}) {
    TensorD x = rand_input({4, side, side}, 32 + side);
    CHECK(fb::fstb_forward(x, params, true, false).shape() == x.shape());
  }

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng prng(700 + seed);
    auto p = fb::FstbParams<double>::init(small_cfg(4), prng);
    TensorD in = rand_input({4, 8, 8}, 800 + seed);
    TensorD got = fb::fstb_forward(in, p, true, false);
    auto want = foam::test::naive::fstb(foam::test::naive::from_tensor(in), p);
    CHECK(max_abs_diff(got.values(), want.v) < 1e-6);
  }
}

TEST_CASE("fstb gradcheck (reduced size) and no dead parameters") {
  Rng rng(41);
  auto params = fb::FstbParams<double>::init(small_cfg(2), rng);
  TensorD x = rand_input({2, 4, 4}, 42);

  nn::NamedParams<double> named;
  params.collect("fstb", named);
  foam::test::jitter_params(named, 4242);

  auto f = [&]() { return weighted_sum(fb::fstb_forward(x, params, true, false), 43); };

  // gradient integrity on every parameter
  GradReport report = gradcheck<double>(f, named, 1e-3);
  if (!report.pass) {
    const auto* w = report.worst();
    MESSAGE("worst: ", w->name, " rel=", w->max_rel_err);
  }
  CHECK(report.pass);

  // every parameter receives some gradient from a random input
  for (auto& [name, t] : named) t.zero_grad();
  f().backward();
  for (auto& [name, t] : named) {
    double mx = 0.0;
    for (double g : t.grad()) mx = std::max(mx, std::abs(g));
    CAPTURE(name);
    CHECK(mx > 1e-12);
  }
}

TEST_CASE("fstb_stack: definitional cascade, all intermediates returned") {
  Rng rng(51);
  fb::FstbConfig cfg = small_cfg(4);
  std::vector<fb::FstbParams<double>> one;
  one.push_back(fb::FstbParams<double>::init(cfg, rng));
  TensorD x = rand_input({4, 8, 8}, 52);

  auto single = fb::fstb_stack(x, one, true, false);
  CHECK(single.size() == 1);
  TensorD direct = fb::fstb_forward(x, one[0], true, false);
  CHECK(max_abs_diff(single[0].values(), direct.values()) == 0.0);

  std::vector<fb::FstbParams<double>> three;
  Rng rng2(53);
  for (int i = 0; i < 3; ++i) three.push_back(fb::FstbParams<double>::init(cfg, rng2));
  auto outs = fb::fstb_stack(x, three, true, false);
  CHECK(outs.size() == 3);
  TensorD cur = x;
  for (std::size_t n = 0; n < 3; ++n) {
    cur = fb::fstb_forward(cur, three[n], true, false);
    CHECK(max_abs_diff(outs[n].values(), cur.values()) == 0.0);
  }

  std::vector<fb::FstbParams<double>> none;
  CHECK_THROWS_AS(fb::fstb_stack(x, none, true), ValueError);
}
