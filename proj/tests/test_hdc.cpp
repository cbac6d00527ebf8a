#include <doctest.h>

#include <cmath>

#include "foam/fstb.hpp"
#include "foam/hdc.hpp"
#include "foam/spectral.hpp"
#include "test_helpers.hpp"

using namespace foam;
namespace hd = foam::hdc;
namespace fb = foam::fstb;
namespace sp = foam::spectral;

namespace {

TensorD rand_image(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return TensorD::uniform(std::move(shape), 0.0, 1.0, rng);
}

hd::FeaturePyramid<double> rand_pyramid(std::uint64_t seed, bool rg = false) {
  Rng rng(seed);
  hd::FeaturePyramid<double> p;
  p.stages.resize(2);
  for (auto& stage : p.stages) {
    stage.push_back(TensorD::uniform({2, 3, 4}, -1.0, 1.0, rng, rg));
    stage.push_back(TensorD::uniform({2, 2, 2}, -1.0, 1.0, rng, rg));
  }
  return p;
}

}  // namespace

TEST_CASE("gaussian kernel sums to one across the studied grid") {
  for (std::size_t ks : {3, 5}) {
    for (double sigma : {0.1, 1.0, 5.0, 10.0}) {
      auto k = hd::gaussian_kernel1d(ks, sigma);
      double total = 0.0;
      for (double v : k) total += v;
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
  CHECK_THROWS_AS(hd::gaussian_kernel1d(4, 1.0), ValueError);
}

TEST_CASE("corrupt: trivial identities and validation") {
  TensorD constant = TensorD::filled({1, 8, 8}, 0.42);

  hd::CorruptionConfig gb;
  gb.kind = hd::CorruptionKind::GaussianBlur;
  gb.gb_kernel_size = 3;
  gb.gb_sigma = 5.0;
  TensorD blurred = hd::corrupt(constant, gb);
  for (double v : blurred.values()) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));

  hd::CorruptionConfig du;
  du.kind = hd::CorruptionKind::DownUp;
  du.du_factor = 2;
  TensorD dued = hd::corrupt(constant, du);
  for (double v : dued.values()) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));

  hd::CorruptionConfig gn;
  gn.kind = hd::CorruptionKind::GaussianNoise;
  gn.gn_sigma = 0.0;
  TensorD same = hd::corrupt(constant, gn);
  CHECK(same.values() == constant.values());

  gn.gn_sigma = 0.2;
  gn.seed = 7;
  TensorD noisy = hd::corrupt(constant, gn);
  CHECK(noisy.values() != constant.values());
  for (double v : noisy.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(hd::corrupt(constant, gn).values() == noisy.values());  // seeded determinism

  hd::CorruptionConfig big;
  big.kind = hd::CorruptionKind::DownUp;
  big.du_factor = 16;
  CHECK_THROWS_AS(hd::corrupt(TensorD::filled({1, 8, 8}, 0.5), big), ValueError);

  TensorD out_of_range = TensorD::filled({1, 4, 4}, 1.5);
  CHECK_THROWS_AS(hd::corrupt(out_of_range, gb), ValueError);

  hd::CorruptionConfig bad;
  bad.gb_kernel_size = 4;
  CHECK_THROWS_AS(bad.validate(), ValueError);
}

TEST_CASE("GB and DU remove high-band energy, GN injects it (small sample)") {
  hd::CorruptionConfig gb;
  gb.gb_kernel_size = 3;
  gb.gb_sigma = 5.0;
  hd::CorruptionConfig du;
  du.kind = hd::CorruptionKind::DownUp;
  du.du_factor = 4;
  hd::CorruptionConfig gn;
  gn.kind = hd::CorruptionKind::GaussianNoise;
  gn.gn_sigma = 0.2;

  const auto edges = sp::default_band_edges();
  int gn_up = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TensorD img = rand_image({1, 16, 16}, 900 + seed);
    const double base = sp::band_energy(sp::fft2(img), edges).fractions[2];
    gn.seed = seed;
    const double after_gb = sp::band_energy(sp::fft2(hd::corrupt(img, gb)), edges).fractions[2];
    const double after_du = sp::band_energy(sp::fft2(hd::corrupt(img, du)), edges).fractions[2];
    const double after_gn = sp::band_energy(sp::fft2(hd::corrupt(img, gn)), edges).fractions[2];
    CHECK(after_gb < base);
    CHECK(after_du < base);
    if (after_gn > base) ++gn_up;
  }
  CHECK(gn_up >= 8);  // noise draw may lose a pair occasionally
}

TEST_CASE("type I loss: hand value, nonnegativity, zero at alignment") {
  // 1 channel, 1x2 spatial: target logits [0,0], prediction logits [0, ln 3]
  hd::FeaturePyramid<double> f_o, f_c;
  f_o.stages.resize(2);
  f_c.stages.resize(2);
  f_o.stages[0].push_back(TensorD::from_data({1, 1, 2}, {0.0, 0.0}));
  f_o.stages[1].push_back(TensorD::from_data({1, 1, 2}, {0.0, 0.0}));
  f_c.stages[0].push_back(TensorD::from_data({1, 1, 2}, {0.0, 0.0}));
  f_c.stages[1].push_back(TensorD::from_data({1, 1, 2}, {0.0, std::log(3.0)}));

  hd::ConsistentLossConfig cfg;
  cfg.target_layers = {1};
  const double expected = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  CHECK(hd::consistent_loss_type1(f_o, f_c, cfg).item() == doctest::Approx(expected).epsilon(1e-12));

  // lambda scales the loss
  cfg.lambda = 2.5;
  CHECK(hd::consistent_loss_type1(f_o, f_c, cfg).item() ==
        doctest::Approx(2.5 * expected).epsilon(1e-12));
  cfg.lambda = 1.0;

  // nonnegative on 1000 random pyramid pairs
  cfg.target_layers = {1, 2};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto a = rand_pyramid(2 * seed);
    auto b = rand_pyramid(2 * seed + 1);
    CHECK(hd::consistent_loss_type1(a, b, cfg).item() >= -1e-9);
  }

  // exact alignment: F_C stage n equals F_O stage n-1
  auto f_o2 = rand_pyramid(77);
  hd::FeaturePyramid<double> f_c2;
  f_c2.stages.resize(2);
  f_c2.stages[0] = f_o2.stages[0];
  for (const auto& t : f_o2.stages[0]) f_c2.stages[1].push_back(t.clone());
  CHECK(std::abs(hd::consistent_loss_type1(f_o2, f_c2, cfg).item()) < 1e-9);

  // config validation
  hd::ConsistentLossConfig empty;
  CHECK_THROWS_AS(hd::consistent_loss_type1(f_o, f_c, empty), ValueError);
  hd::ConsistentLossConfig badlayer;
  badlayer.target_layers = {5};
  CHECK_THROWS_AS(hd::consistent_loss_type1(f_o, f_c, badlayer), ValueError);
}

TEST_CASE("type II loss: definition cases and loop oracle") {
  hd::ConsistentLossConfig cfg;
  cfg.loss_type = hd::LossType::TypeII;
  cfg.target_layers = {1, 2};

  auto f_o = rand_pyramid(101);
  hd::FeaturePyramid<double> f_c;
  f_c.stages.resize(2);
  f_c.stages[0] = f_o.stages[0];
  for (const auto& t : f_o.stages[0]) f_c.stages[1].push_back(t.clone());
  CHECK(hd::consistent_loss_type2(f_o, f_c, cfg).item() == 0.0);

  // single differing element: d^2 / HW
  const double d = 0.37;
  f_c.stages[1][0].values()[3] += d;
  CHECK(hd::consistent_loss_type2(f_o, f_c, cfg).item() ==
        doctest::Approx(d * d / 12.0).epsilon(1e-12));  // level 1 is 2x3x4, HW = 12
  f_c.stages[1][0].values()[3] -= d;

  // random pair against a direct double-loop evaluation
  auto a = rand_pyramid(201);
  auto b = rand_pyramid(202);
  double want = 0.0;
  for (std::size_t n = 1; n < 2; ++n) {
    for (std::size_t layer : cfg.target_layers) {
      const auto& t = a.stages[n - 1][layer - 1];
      const auto& s = b.stages[n][layer - 1];
      const double hw = static_cast<double>(t.shape()[1] * t.shape()[2]);
      double acc = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double diff = t.values()[i] - s.values()[i];
        acc += diff * diff;
      }
      want += acc / hw;
    }
  }
  CHECK(std::abs(hd::consistent_loss_type2(a, b, cfg).item() - want) < 1e-10);
}

TEST_CASE("detach_base controls teacher gradients; both losses differentiable") {
  for (auto type : {hd::LossType::TypeI, hd::LossType::TypeII}) {
    auto f_o = rand_pyramid(301, /*rg=*/true);
    auto f_c = rand_pyramid(302, /*rg=*/true);
    hd::ConsistentLossConfig cfg;
    cfg.loss_type = type;
    cfg.target_layers = {1, 2};

    cfg.detach_base = true;
    for (auto& stage : f_o.stages)
      for (auto& t : stage) t.zero_grad();
    for (auto& stage : f_c.stages)
      for (auto& t : stage) t.zero_grad();
    hd::consistent_loss(f_o, f_c, cfg).backward();
    for (auto& stage : f_o.stages)
      for (auto& t : stage)
        for (double g : t.grad()) CHECK(g == 0.0);
    double student_grad = 0.0;
    for (double g : f_c.stages[1][0].grad()) student_grad += std::abs(g);
    CHECK(student_grad > 0.0);

    cfg.detach_base = false;
    for (auto& stage : f_o.stages)
      for (auto& t : stage) t.zero_grad();
    hd::consistent_loss(f_o, f_c, cfg).backward();
    double teacher_grad = 0.0;
    for (double g : f_o.stages[0][0].grad()) teacher_grad += std::abs(g);
    CHECK(teacher_grad > 0.0);

    // gradcheck w.r.t. student features (teacher detached)
    cfg.detach_base = true;
    nn::NamedParams<double> params;
    params.emplace_back("student_l1", f_c.stages[1][0]);
    params.emplace_back("student_l2", f_c.stages[1][1]);
    auto f = [&]() { return hd::consistent_loss(f_o, f_c, cfg); };
    CHECK(gradcheck<double>(f, params, 1e-3).pass);
  }
}

TEST_CASE("hdc_step: identity corruption and gradient flow into shared params") {
  Rng rng(401);
  fb::FstbConfig cfg;
  cfg.channels = 4;
  auto block = fb::FstbParams<double>::init(cfg, rng);

  auto shared_forward = [&](const TensorD& img, bool is_base) {
    hd::FeaturePyramid<double> pyr;
    // toy single-level "backbone": channel replication (no parameters)
    std::vector<TensorD> reps(4, img);
    TensorD f0 = concat0<double>({reps[0], reps[1], reps[2], reps[3]});
    pyr.stages.push_back({f0});
    pyr.stages.push_back({fb::fstb_forward(f0, block, /*training=*/true,
                                           /*update_stats=*/is_base)});
    return pyr;
  };

  hd::ConsistentLossConfig lcfg;
  lcfg.target_layers = {1};

  // degenerate corruption: branches identical, loss exactly ~0
  hd::CorruptionConfig identity;
  identity.kind = hd::CorruptionKind::GaussianNoise;
  identity.gn_sigma = 0.0;
  TensorD img = rand_image({1, 8, 8}, 402);
  const auto before = hd::corruption_branch_count().load();
  auto res = hd::hdc_step<double>(img, shared_forward, identity, lcfg);
  CHECK(hd::corruption_branch_count().load() == before + 1);
  CHECK(std::abs(res.loss.item()) < 1e-7);

  // the previous-stage teacher variant compares features of different depth,
  // so identical branches still produce a nonzero value
  hd::ConsistentLossConfig shifted = lcfg;
  shifted.same_depth_teacher = false;
  auto res_shifted = hd::hdc_step<double>(img, shared_forward, identity, shifted);
  CHECK(res_shifted.loss.item() > 1e-4);

  // real corruption: gradients reach FSTB parameters through the corruption branch
  hd::CorruptionConfig gb;
  gb.gb_kernel_size = 3;
  gb.gb_sigma = 5.0;
  nn::NamedParams<double> named;
  block.collect("fstb", named);
  for (auto& [name, t] : named) t.zero_grad();
  auto res2 = hd::hdc_step<double>(img, shared_forward, gb, lcfg);
  CHECK(res2.loss.item() > 0.0);
  res2.loss.backward();
  double total = 0.0;
  for (auto& [name, t] : named)
    for (double g : t.grad()) total += std::abs(g);
  CHECK(total > 0.0);
}

TEST_CASE("theorem I: arithmetic, continuity, property sweep") {
  auto [before, after] = hd::theorem1_contrast(1.0, 2.0, 1.0);
  CHECK(before == doctest::Approx(1.5));
  CHECK(after == doctest::Approx(2.0));
  CHECK(after > before);

  // c -> 0 limit: after approaches before
  double prev_gap = 1e9;
  for (double c : {1e-1, 1e-3, 1e-6, 1e-9}) {
    auto [b2, a2] = hd::theorem1_contrast(1.0, 2.0, c);
    const double gap = a2 - b2;
    CHECK(gap > 0.0);
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }

  Rng rng(501);
  for (int i = 0; i < 1000; ++i) {
    const double f = rng.uniform(1e-6, 10.0);
    const double b = rng.uniform(1e-6, 10.0);
    const double c = rng.uniform(0.0, 1.0) * b;
    if (c <= 0.0 || c >= b) continue;
    auto [bf, af] = hd::theorem1_contrast(f, b, c);
    CHECK(af > bf);
  }

  CHECK_THROWS_AS(hd::theorem1_contrast(-1.0, 2.0, 1.0), ValueError);
  CHECK_THROWS_AS(hd::theorem1_contrast(1.0, 2.0, 2.0), ValueError);
}
