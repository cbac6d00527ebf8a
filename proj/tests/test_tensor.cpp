#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "foam/tensor.hpp"
#include "test_helpers.hpp"

using namespace foam;
using foam::test::rel_err;
using foam::test::weighted_sum;

namespace {

TensorD make_rand(Shape shape, std::uint64_t seed, bool rg = false) {
  Rng rng(seed);
  return TensorD::uniform(std::move(shape), -2.0, 2.0, rng, rg);
}

}  // namespace

TEST_CASE("elementwise trivial values") {
  TensorD z = TensorD::zeros({1});
  CHECK(gelu(z).item() == doctest::Approx(0.0));
  CHECK(sigmoid(z).item() == doctest::Approx(0.5));

  // gelu(1) against the direct Gaussian-CDF evaluation x * Phi(x)
  TensorD one = TensorD::scalar(1.0);
  const double expected = 1.0 * 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  CHECK(gelu(one).item() == doctest::Approx(expected).epsilon(1e-14));
  CHECK(gelu(one).item() == doctest::Approx(0.8413447460685429).epsilon(1e-12));
}

TEST_CASE("broadcasting follows the leading-1 rule") {
  TensorD a = TensorD::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorD b = TensorD::from_data({3}, {10, 20, 30});
  TensorD c = add(a, b);
  CHECK(c.values() == std::vector<double>{11, 22, 33, 14, 25, 36});

  TensorD s = TensorD::scalar(2.0);
  CHECK(mul(a, s).values() == std::vector<double>{2, 4, 6, 8, 10, 12});

  TensorD lead = TensorD::from_data({1, 2, 3}, {1, 1, 1, 2, 2, 2});
  CHECK(add(lead, a).shape() == Shape{1, 2, 3});

  TensorD bad = TensorD::from_data({2, 1, 3}, {1, 1, 1, 2, 2, 2});
  CHECK_THROWS_WITH_AS(add(bad, a), doctest::Contains("[2x1x3]"), ShapeError);
}

TEST_CASE("domain errors are surfaced") {
  TensorD neg = TensorD::from_data({2}, {1.0, -1.0});
  CHECK_THROWS_AS(log_(neg), ValueError);
  TensorD zero = TensorD::from_data({2}, {1.0, 0.0});
  CHECK_THROWS_AS(div(TensorD::from_data({2}, {1.0, 1.0}), zero), ValueError);
  // Overflow -> Inf is an error, not a silent value.
  TensorD big = TensorD::scalar(1e6);
  CHECK_THROWS_AS(exp_(mul_scalar(big, 1e6)), NumericError);
}

TEST_CASE("matmul matches hand values and a triple-loop oracle") {
  TensorD eye = TensorD::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  TensorD a = make_rand({3, 3}, 7);
  TensorD prod = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(prod.values()[i] == doctest::Approx(a.values()[i]));

  TensorD m = TensorD::from_data({2, 2}, {1, 2, 3, 4});
  TensorD v = TensorD::from_data({2, 1}, {1, 1});
  TensorD mv = matmul(m, v);
  CHECK(mv.values()[0] == doctest::Approx(3));
  CHECK(mv.values()[1] == doctest::Approx(7));

  TensorD x = make_rand({5, 7}, 11);
  TensorD y = make_rand({7, 3}, 13);
  TensorD got = matmul(x, y);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 7; ++k) acc += x.values()[i * 7 + k] * y.values()[k * 3 + j];
      CHECK(std::abs(got.values()[i * 3 + j] - acc) < 1e-12);
    }
  }

  CHECK_THROWS_AS(matmul(x, x), ShapeError);
}

TEST_CASE("softmax values, stability, and properties") {
  TensorD flat = softmax(TensorD::from_data({3}, {0, 0, 0}), 0);
  for (double v : flat.values()) CHECK(v == doctest::Approx(1.0 / 3.0));

  TensorD huge = softmax(TensorD::from_data({2}, {1000, 1000}), 0);
  CHECK(huge.values()[0] == doctest::Approx(0.5));
  CHECK(huge.values()[1] == doctest::Approx(0.5));

  TensorD p = softmax(TensorD::from_data({3}, {1, 2, 3}), 0);
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(p.values()[i] == doctest::Approx(std::exp(1.0 + static_cast<double>(i)) / denom));

  // slice sums and shift invariance on random input
  TensorD x = make_rand({4, 6}, 3);
  TensorD sm = softmax(x, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 6; ++j) row += sm.values()[i * 6 + j];
    CHECK(std::abs(row - 1.0) < 1e-6);
  }
  TensorD shifted = softmax(add_scalar(x, 17.5), 1);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(sm.values()[i] - shifted.values()[i]) < 1e-6);
}

TEST_CASE("backward: linearity, accumulation, detach") {
  Rng rng(5);
  TensorD x = TensorD::uniform({8}, -1.0, 1.0, rng, true);

  auto path_a = [&]() { return sum(mul(x, x)); };
  auto path_b = [&]() { return sum(sin_(x)); };

  x.zero_grad();
  add(path_a(), path_b()).backward();
  std::vector<double> combined = x.grad();

  x.zero_grad();
  path_a().backward();
  std::vector<double> ga = x.grad();
  x.zero_grad();
  path_b().backward();
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(combined[i] == doctest::Approx(ga[i] + x.grad()[i]).epsilon(1e-12));

  // repeated backward without zeroing accumulates
  x.zero_grad();
  path_a().backward();
  path_a().backward();
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0 * ga[i]).epsilon(1e-12));

  // detach blocks the flow
  x.zero_grad();
  sum(mul(x.detach(), x.detach())).backward();
  for (double g : x.grad()) CHECK(g == 0.0);

  CHECK_THROWS_AS(mul(x, x).backward(), ShapeError);  // non-scalar loss
}

TEST_CASE("finite differences on known gradients") {
  TensorD p = TensorD::from_data({2}, {1.0, 2.0}, true);
  auto f_sq = [&]() { return sum(mul(p, p)); };
  TensorD g = finite_diff_grad<double>(f_sq, p, 1e-5);
  CHECK(g.values()[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(g.values()[1] == doctest::Approx(4.0).epsilon(1e-6));

  TensorD q = TensorD::from_data({1}, {0.0}, true);
  auto f_sin = [&]() { return sum(sin_(q)); };
  CHECK(finite_diff_grad<double>(f_sin, q, 1e-5).values()[0] == doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS_AS(finite_diff_grad<double>(f_sin, q, 0.0), ValueError);
}

TEST_CASE("gradcheck across the op suite, 20 randomized trials") {
  using foam::test::check_op_grad;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const std::uint64_t s = 1000 + trial;
    CHECK(check_op_grad<double>([](const TensorD& x) { return mul(x, x); }, {3, 4}, s).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return exp_(x); }, {6}, s).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return log_(x); }, {6}, s, 1e-3, 0.5, 3.0).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return gelu(x); }, {6}, s).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return sigmoid(x); }, {6}, s).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return softmax(x, 0); }, {7}, s).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return log_softmax(x, 0); }, {7}, s).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return transpose2d(x); }, {3, 5}, s).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return reshape(x, {15}); }, {3, 5}, s).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return narrow0(x, 1, 2); }, {4, 3}, s).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return subsample(x, 2); }, {2, 4, 4}, s).pass);
    CHECK(check_op_grad<double>([](const TensorD& x) { return upsample_nearest(x, 2); }, {2, 3, 3}, s).pass);
  }

  // binary ops and div away from zero
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(2000 + trial);
    TensorD a = TensorD::uniform({3, 4}, -2.0, 2.0, rng, true);
    TensorD b = TensorD::uniform({3, 4}, 0.5, 2.5, rng, true);
    auto f = [&]() {
      TensorD u = add(mul(a, b), div(a, b));
      return weighted_sum(sub(u, b), 99 + trial);
    };
    CHECK(gradcheck<double>(f, {{"a", a}, {"b", b}}, 1e-3).pass);
  }

  // matmul + concat
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(3000 + trial);
    TensorD a = TensorD::uniform({3, 4}, -1.0, 1.0, rng, true);
    TensorD b = TensorD::uniform({4, 2}, -1.0, 1.0, rng, true);
    auto f = [&]() {
      TensorD m = matmul(a, b);
      TensorD cat = concat0<double>({m, b});  // b gets grads via two paths
      return weighted_sum(cat, 123 + trial);
    };
    CHECK(gradcheck<double>(f, {{"a", a}, {"b", b}}, 1e-3).pass);
  }

  // bce with logits
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    Rng rng(4000 + trial);
    TensorD z = TensorD::uniform({2, 3, 3}, -3.0, 3.0, rng, true);
    TensorD y = TensorD::uniform({2, 3, 3}, 0.0, 1.0, rng);
    auto f = [&]() { return bce_with_logits(z, y); };
    CHECK(gradcheck<double>(f, {{"z", z}}, 1e-3).pass);
  }
}

TEST_CASE("gradcheck reports failures without throwing") {
  // A deliberately wrong "gradient": compare d/dx of x^2 against x^3's path
  Rng rng(71);
  TensorD x = TensorD::uniform({4}, 0.5, 1.5, rng, true);
  bool flip = false;
  auto f = [&]() -> TensorD {
    // alternate between two different functions so analytic and numeric differ
    flip = !flip;
    return flip ? sum(mul(x, x)) : sum(mul(mul(x, x), x));
  };
  GradReport r = gradcheck<double>(f, {{"x", x}}, 1e-3);
  CHECK_FALSE(r.pass);
  CHECK(r.worst() != nullptr);
}

TEST_CASE("determinism: same seed, same bits") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    TensorD x = TensorD::randn({4, 4}, rng);
    TensorD y = softmax(mul(gelu(x), sigmoid(x)), 1);
    return y.values();
  };
  CHECK(run(42) == run(42));
  CHECK(run(42) != run(43));
}

TEST_CASE("tensor binary roundtrip and bad files") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "foam_tensor_io_test";
  fs::create_directories(dir);
  const std::string path = (dir / "t.tns").string();

  TensorD t = make_rand({2, 3, 4}, 9);
  save_tensor(path, t);
  TensorD back = load_tensor<double>(path);
  CHECK(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i)
    CHECK(back.values()[i] == doctest::Approx(t.values()[i]).epsilon(1e-6));

  const std::string bogus = (dir / "bogus.tns").string();
  {
    std::FILE* f = std::fopen(bogus.c_str(), "wb");
    std::fputs("NOTMAGIC", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_tensor<float>(bogus), IoError);
  fs::remove_all(dir);
}
