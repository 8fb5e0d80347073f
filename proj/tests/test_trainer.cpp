#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "avey/avey.hpp"

namespace {

using DT = avey::DualTensor<double>;

avey::ModelConfig tiny_cfg() {
  avey::ModelConfig c;
  c.d = 4;
  c.layers = 1;
  c.expansion = 2;
  c.split = 2;
  c.k = 1;
  c.context = 8;
  c.vocab = 9;
  return c;
}

std::vector<std::vector<int>> make_blocks(const avey::ModelConfig& cfg,
                                          std::size_t count,
                                          std::uint64_t seed) {
  avey::Rng rng(seed);
  std::vector<std::vector<int>> blocks(count);
  for (auto& b : blocks) {
    b.resize(cfg.context + 1);
    for (auto& t : b) t = int(avey::uniform_int(rng, cfg.vocab));
  }
  return blocks;
}

template <typename Real>
bool params_equal(avey::ModelParams<Real>& a, avey::ModelParams<Real>& b) {
  bool eq = true;
  std::vector<std::pair<std::string, const std::vector<Real>*>> av;
  a.for_each_param([&](const std::string& n, avey::DualTensor<Real>& t) {
    av.emplace_back(n, &t.values());
  });
  std::size_t i = 0;
  b.for_each_param([&](const std::string& n, avey::DualTensor<Real>& t) {
    if (i >= av.size() || av[i].first != n || *av[i].second != t.values())
      eq = false;
    ++i;
  });
  return eq && i == av.size();
}

}  // namespace

TEST_CASE("learning rate decays from peak to a ten percent floor",
          "[trainer]") {
  double p = 3e-3;
  CHECK(avey::lr_at(0, 100, p) == Catch::Approx(p).epsilon(1e-12));
  CHECK(avey::lr_at(99, 100, p) == Catch::Approx(0.1 * p).epsilon(1e-12));
  // Midpoint of the cosine sits at the average of peak and floor.
  CHECK(avey::lr_at(50, 101, p) == Catch::Approx(0.55 * p).epsilon(1e-12));
  CHECK(avey::lr_at(0, 1, p) == p);
  CHECK_THROWS_AS(avey::lr_at(100, 100, p), avey::ContractViolation);
  CHECK_THROWS_AS(avey::lr_at(-1, 100, p), avey::ContractViolation);
}

TEST_CASE("weight decay touches matrices only", "[trainer]") {
  CHECK(avey::decays(DT(3, 4)));
  CHECK_FALSE(avey::decays(DT(1, 4)));
  CHECK_FALSE(avey::decays(DT(4, 1)));
  CHECK_FALSE(avey::decays(DT(1, 1)));
}

TEST_CASE("gradient clipping rescales to the ceiling", "[trainer]") {
  auto cfg = tiny_cfg();
  auto params = avey::init_params<double>(cfg, 1);
  // Give the embedding a gradient of known norm 10.
  params.embedding.grad()[0] = 6.0;
  params.embedding.grad()[1] = 8.0;
  CHECK(avey::global_grad_norm(params) == Catch::Approx(10.0));
  double pre = avey::clip_gradients(params, 1.0);
  CHECK(pre == Catch::Approx(10.0));
  CHECK(avey::global_grad_norm(params) == Catch::Approx(1.0));
  CHECK(params.embedding.grad()[0] == Catch::Approx(0.6));
  // Already inside the ceiling: untouched.
  double pre2 = avey::clip_gradients(params, 5.0);
  CHECK(pre2 == Catch::Approx(1.0));
  CHECK(params.embedding.grad()[0] == Catch::Approx(0.6));
}

TEST_CASE("first optimizer update follows the bias-corrected rule",
          "[trainer]") {
  auto cfg = tiny_cfg();
  auto params = avey::init_params<double>(cfg, 2);
  auto adam = avey::AdamState<double>::make(params);
  avey::TrainConfig tc;
  tc.eps = 1e-12;
  tc.weight_decay = 0.1;
  double lr = 1e-2;

  double w_mat = params.embedding.at(0, 0);
  double w_bias = params.layers[0].b.at(0, 0);
  params.embedding.grad()[0] = 0.5;
  params.layers[0].b.grad()[0] = -0.25;
  adamw_step(params, adam, lr, tc);

  // From zero moments, one step moves by exactly lr in the gradient's
  // direction (up to eps), with decay multiplying matrices first.
  double want_mat = (1.0 - lr * tc.weight_decay) * w_mat - lr;
  double want_bias = w_bias + lr;  // no decay on bias rows
  CHECK(params.embedding.at(0, 0) == Catch::Approx(want_mat).margin(1e-10));
  CHECK(params.layers[0].b.at(0, 0) ==
        Catch::Approx(want_bias).margin(1e-10));
  CHECK(adam.step == 1);
  // Untouched entries with zero gradient still decay if they sit in a
  // matrix, and keep their value otherwise.
  CHECK(params.layers[0].gain.at(0, 1) == 1.0);
}

TEST_CASE("optimizer state must match the parameter census", "[trainer]") {
  auto cfg = tiny_cfg();
  auto params = avey::init_params<double>(cfg, 3);
  auto adam = avey::AdamState<double>::make(params);
  std::swap(adam.slots[0], adam.slots[1]);
  avey::TrainConfig tc;
  CHECK_THROWS_AS(adamw_step(params, adam, 1e-3, tc),
                  avey::ContractViolation);
}

TEST_CASE("training reduces loss on a tiny repeated corpus", "[trainer]") {
  auto cfg = tiny_cfg();
  auto params = avey::init_params<double>(cfg, 7);
  auto adam = avey::AdamState<double>::make(params);
  auto blocks = make_blocks(cfg, 2, 8);
  avey::TrainConfig tc;
  tc.steps = 60;
  tc.batch = 2;
  tc.peak_lr = 3e-2;
  tc.log_every = 1000;
  auto res = avey::train(params, adam, blocks, tc);
  REQUIRE(res.steps_done == 60);
  REQUIRE_FALSE(res.halted_non_finite);
  REQUIRE(res.history.size() == 60);
  double first = res.history.front().loss;
  CHECK(first == Catch::Approx(std::log(double(cfg.vocab))).epsilon(0.05));
  CHECK(res.final_loss < 0.8 * first);
  CHECK(res.counters.enricher_flops > 0);
}

TEST_CASE("equal seeds give bitwise-equal loss curves", "[trainer]") {
  auto cfg = tiny_cfg();
  avey::TrainConfig tc;
  tc.steps = 12;
  tc.batch = 2;
  tc.log_every = 1000;
  auto blocks = make_blocks(cfg, 3, 21);

  auto run = [&]() {
    auto params = avey::init_params<double>(cfg, 20);
    auto adam = avey::AdamState<double>::make(params);
    return avey::train(params, adam, blocks, tc);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    REQUIRE(a.history[i].loss == b.history[i].loss);
    REQUIRE(a.history[i].grad_norm == b.history[i].grad_norm);
  }
}

TEST_CASE("non-finite loss halts before touching parameters", "[trainer]") {
  auto cfg = tiny_cfg();
  auto params = avey::init_params<double>(cfg, 30);
  auto pristine = avey::init_params<double>(cfg, 30);
  params.embedding.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  pristine.embedding.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  auto adam = avey::AdamState<double>::make(params);
  auto blocks = make_blocks(cfg, 2, 31);
  avey::TrainConfig tc;
  tc.steps = 5;
  auto res = avey::train(params, adam, blocks, tc);
  CHECK(res.halted_non_finite);
  CHECK(res.steps_done == 0);
  CHECK(res.history.empty());
  CHECK(adam.step == 0);
  // Every finite entry still holds its initial value.
  bool untouched = true;
  params.embedding.values()[0] = 0.0;
  pristine.embedding.values()[0] = 0.0;
  untouched = params_equal(params, pristine);
  CHECK(untouched);
}

TEST_CASE("a checkpointed run continues bitwise identically", "[trainer]") {
  namespace fs = std::filesystem;
  auto cfg = tiny_cfg();
  avey::Config full;
  full.model = cfg;
  auto blocks = make_blocks(cfg, 4, 40);

  avey::TrainConfig seg1;
  seg1.steps = 3;
  seg1.batch = 2;
  seg1.log_every = 1000;
  auto params = avey::init_params<double>(cfg, 41);
  auto adam = avey::AdamState<double>::make(params);
  avey::train(params, adam, blocks, seg1);

  auto dir = fs::temp_directory_path() / "avey_trainer_ck_test";
  fs::remove_all(dir);
  avey::save_checkpoint(dir.string(), params, &adam, 3, "", seg1);

  // Continue in place for three more steps of a six-step schedule.
  avey::TrainConfig cont = seg1;
  cont.steps = 6;
  auto direct = avey::train(params, adam, blocks, cont, 3);

  // Reload the snapshot and continue the same way.
  auto ck = avey::load_checkpoint<double>(dir.string());
  REQUIRE(ck.has_adam);
  REQUIRE(ck.step == 3);
  REQUIRE(ck.adam.step == 3);
  auto replay = avey::train(ck.params, ck.adam, blocks, cont, 3);

  REQUIRE(direct.history.size() == replay.history.size());
  for (std::size_t i = 0; i < direct.history.size(); ++i)
    REQUIRE(direct.history[i].loss == replay.history[i].loss);
  CHECK(params_equal(params, ck.params));
  fs::remove_all(dir);
}

TEST_CASE("checkpoints round-trip every tensor bit and the metadata",
          "[trainer]") {
  namespace fs = std::filesystem;
  auto cfg = tiny_cfg();
  cfg.tied = false;
  auto params = avey::init_params<double>(cfg, 50);
  auto adam = avey::AdamState<double>::make(params);
  adam.slots[0].m[3] = 0.125;
  adam.slots[2].v[1] = 2.5;
  adam.step = 17;
  avey::Rng rng(99);
  rng();
  auto dir = fs::temp_directory_path() / "avey_ck_roundtrip_test";
  fs::remove_all(dir);
  avey::save_checkpoint(dir.string(), params, &adam, 17,
                        avey::rng_state_string(rng));

  auto ck = avey::load_checkpoint<double>(dir.string());
  CHECK(ck.step == 17);
  CHECK(ck.has_adam);
  CHECK(ck.adam.step == 17);
  CHECK(params_equal(params, ck.params));
  CHECK(ck.adam.slots[0].m[3] == 0.125);
  CHECK(ck.adam.slots[2].v[1] == 2.5);
  CHECK_FALSE(ck.config.model.tied);
  auto restored = avey::rng_from_state_string(ck.rng);
  CHECK(restored() == rng());

  SECTION("precision of the snapshot must match the loader") {
    CHECK_THROWS_AS(avey::load_checkpoint<float>(dir.string()),
                    avey::ContractViolation);
  }
  SECTION("a snapshot without optimizer state says so") {
    auto dir2 = fs::temp_directory_path() / "avey_ck_noadam_test";
    fs::remove_all(dir2);
    avey::save_checkpoint<double>(dir2.string(), params, nullptr, 0, "");
    auto ck2 = avey::load_checkpoint<double>(dir2.string());
    CHECK_FALSE(ck2.has_adam);
    CHECK(params_equal(params, ck2.params));
    fs::remove_all(dir2);
  }
  SECTION("missing directories fail loudly") {
    CHECK_THROWS_AS(avey::load_checkpoint<double>("/nonexistent/ck"),
                    avey::ContractViolation);
  }
  fs::remove_all(dir);
}

TEST_CASE("training rejects malformed blocks and configs", "[trainer]") {
  auto cfg = tiny_cfg();
  auto params = avey::init_params<double>(cfg, 60);
  auto adam = avey::AdamState<double>::make(params);
  avey::TrainConfig tc;
  tc.steps = 1;
  CHECK_THROWS_AS(avey::train(params, adam, {}, tc),
                  avey::ContractViolation);
  std::vector<std::vector<int>> bad = {{1, 2, 3}};
  CHECK_THROWS_AS(avey::train(params, adam, bad, tc),
                  avey::ContractViolation);
  avey::TrainConfig neg;
  neg.steps = 0;
  auto blocks = make_blocks(cfg, 1, 61);
  CHECK_THROWS_AS(avey::train(params, adam, blocks, neg),
                  avey::ContractViolation);
}
