#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "foam/harness.hpp"

using namespace foam;
namespace hs = foam::harness;
namespace sc = foam::scenes;

namespace {

hs::TrainConfig smoke_config() {
  hs::TrainConfig cfg;
  cfg.channels = 4;
  cfg.levels = 3;
  cfg.fstb_stages = 1;
  cfg.fstb_levels = "top2";
  cfg.steps = 30;
  cfg.batch_size = 2;
  cfg.lr = 0.05;
  cfg.optimizer = "sgd";
  cfg.seed = 3;
  cfg.train_scenes = 16;
  cfg.eval_scenes = 8;
  cfg.scene.height = 32;
  cfg.scene.width = 32;
  cfg.scene.seed = 21;
  cfg.corruption.gb_kernel_size = 3;
  cfg.corruption.gb_sigma = 5.0;
  return cfg;
}

std::vector<sc::Scene> smoke_scenes(const hs::TrainConfig& cfg, std::size_t count,
                                    std::uint64_t base) {
  return sc::gen_scenes(cfg.scene, count, base);
}

}  // namespace

TEST_CASE("resolve_level_set") {
  CHECK(hs::resolve_level_set("top1", 3) == std::vector<std::size_t>{3});
  CHECK(hs::resolve_level_set("top2", 3) == std::vector<std::size_t>{2, 3});
  CHECK(hs::resolve_level_set("top2", 1) == std::vector<std::size_t>{1});
  CHECK(hs::resolve_level_set("all", 3) == std::vector<std::size_t>{1, 2, 3});
  CHECK(hs::resolve_level_set("1,3", 3) == std::vector<std::size_t>{1, 3});
  CHECK_THROWS_AS(hs::resolve_level_set("4", 3), ValueError);
  CHECK_THROWS_AS(hs::resolve_level_set("bogus", 3), ValueError);
}

TEST_CASE("train config parsing, echo, and validation") {
  const std::string text = R"(
# toy run
model.channels = 8
model.levels = 3
fstb.stages = 2
train.steps = 10
train.lr = 0.02
train.optimizer = adam
hdc.loss_type = II
hdc.lambda = 0.5
hdc.layers = top1
corruption.kind = gn
corruption.gn_sigma = 0.3
scene.height = 32
scene.width = 32
)";
  hs::TrainConfig cfg = hs::TrainConfig::from_config(Config::parse_string(text));
  CHECK(cfg.channels == 8);
  CHECK(cfg.fstb_stages == 2);
  CHECK(cfg.optimizer == "adam");
  CHECK(cfg.loss.loss_type == hdc::LossType::TypeII);
  CHECK(cfg.loss.lambda == doctest::Approx(0.5));
  CHECK(cfg.corruption.kind == hdc::CorruptionKind::GaussianNoise);

  // roundtrip through the echo
  hs::TrainConfig back = hs::TrainConfig::from_config(Config::parse_string(cfg.to_config().serialize()));
  CHECK(back.channels == cfg.channels);
  CHECK(back.loss.lambda == doctest::Approx(cfg.loss.lambda));
  CHECK(back.corruption.gn_sigma == doctest::Approx(cfg.corruption.gn_sigma));

  CHECK_THROWS_AS(hs::TrainConfig::from_config(Config::parse_string("bogus.key = 1")), ValueError);

  hs::TrainConfig bad = smoke_config();
  bad.enable_fstb = false;
  bad.enable_hdc = true;
  CHECK_THROWS_AS(bad.validate(), ValueError);
}

TEST_CASE("backbone and head shapes") {
  Rng rng(5);
  auto backbone = hs::TinyBackboneParams::init(1, 8, 3, rng);
  Tensor<float> img = Tensor<float>::filled({1, 64, 64}, 0.5f);
  auto levels = hs::backbone_forward(img, backbone, /*training=*/false, /*update_stats=*/false);
  REQUIRE(levels.size() == 3);
  CHECK(levels[0].shape() == Shape{8, 32, 32});
  CHECK(levels[1].shape() == Shape{8, 16, 16});
  CHECK(levels[2].shape() == Shape{8, 8, 8});

  auto head = hs::SegHeadParams::init(8, 3, rng);
  Tensor<float> logits = hs::seg_head_forward(levels, head, 64, 64, false, false);
  CHECK(logits.shape() == Shape{1, 64, 64});

  // bce at zero logits is ln 2 regardless of the mask
  Tensor<float> mask = Tensor<float>::zeros({1, 64, 64});
  Tensor<float> zero_logits = Tensor<float>::zeros({1, 64, 64});
  CHECK(hs::task_loss(zero_logits, mask).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("training is deterministic and reduces the task loss") {
  namespace fs = std::filesystem;
  auto cfg = smoke_config();
  auto dataset = smoke_scenes(cfg, cfg.train_scenes, 1);

  const std::string dir_a = (fs::temp_directory_path() / "foam_train_a").string();
  const std::string dir_b = (fs::temp_directory_path() / "foam_train_b").string();
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  auto r1 = hs::train(cfg, dataset, dir_a);
  auto r2 = hs::train(cfg, dataset, dir_b);

  CHECK(r1.final_task < r1.initial_task);

  // bitwise-identical traces
  std::ifstream fa(dir_a + "/trace.csv"), fb(dir_b + "/trace.csv");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(!sa.str().empty());

  // trace csv roundtrip
  auto rows = hs::read_trace_csv(dir_a + "/trace.csv");
  REQUIRE(rows.size() == cfg.steps);
  CHECK(rows.front().task == doctest::Approx(r1.trace.front().task));
  CHECK(rows.back().total == doctest::Approx(r1.trace.back().total));

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("degenerate corruption keeps the consistent component at zero") {
  auto cfg = smoke_config();
  cfg.steps = 6;
  cfg.corruption.kind = hdc::CorruptionKind::GaussianNoise;
  cfg.corruption.gn_sigma = 0.0;
  auto dataset = smoke_scenes(cfg, 8, 2);
  auto result = hs::train(cfg, dataset, "");
  for (const auto& row : result.trace) {
    CHECK(std::abs(row.consistent) < 1e-7);
    CHECK(row.total == doctest::Approx(row.task).epsilon(1e-6));
  }
}

TEST_CASE("evaluation: ranges, no corruption branch, checkpoint roundtrip") {
  namespace fs = std::filesystem;
  auto cfg = smoke_config();
  cfg.steps = 10;
  auto dataset = smoke_scenes(cfg, cfg.train_scenes, 3);
  auto eval_set = smoke_scenes(cfg, cfg.eval_scenes, 4);

  const std::string dir = (fs::temp_directory_path() / "foam_ckpt_test").string();
  fs::remove_all(dir);
  hs::Model model;
  hs::train(cfg, dataset, dir, &model);

  const auto corruption_calls_before = hdc::corruption_branch_count().load();
  auto report = hs::evaluate(model, eval_set);
  CHECK(hdc::corruption_branch_count().load() == corruption_calls_before);  // inference never corrupts

  CHECK(report.per_scene_iou.size() == eval_set.size());
  CHECK(report.mean_iou >= 0.0);
  CHECK(report.mean_iou <= 1.0);
  CHECK(report.precision >= 0.0);
  CHECK(report.precision <= 1.0);
  CHECK(report.recall >= 0.0);
  CHECK(report.recall <= 1.0);

  // reloaded checkpoint evaluates identically
  hs::Model loaded = hs::Model::load(dir);
  auto report2 = hs::evaluate(loaded, eval_set);
  CHECK(report2.mean_iou == doctest::Approx(report.mean_iou).epsilon(1e-7));

  fs::remove_all(dir);
}

TEST_CASE("median helper") {
  CHECK(hs::median({3.0, 1.0, 2.0}) == doctest::Approx(2.0));
  CHECK(hs::median({4.0, 1.0, 2.0, 3.0}) == doctest::Approx(2.5));
  CHECK_THROWS_AS(hs::median({}), ValueError);
}
