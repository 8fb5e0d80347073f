#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "avey/avey.hpp"

namespace {

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

}  // namespace

TEST_CASE("a constant-logit model scores exactly vocab perplexity",
          "[eval]") {
  auto cfg = tiny_cfg();
  auto params = avey::init_params<double>(cfg, 1);
  params.for_each_param([](const std::string&, avey::DualTensor<double>& t) {
    std::fill(t.values().begin(), t.values().end(), 0.0);
  });
  std::vector<std::vector<int>> blocks = {
      {1, 2, 3, 4, 5, 6, 7, 8, 0},
      {0, 1, 0, 1, 0, 1, 0, 1, 0},
  };
  double ppl = avey::perplexity(params, blocks);
  CHECK(ppl == Catch::Approx(double(cfg.vocab)).epsilon(1e-9));
}

TEST_CASE("an untrained model sits near uniform perplexity", "[eval]") {
  avey::ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 2;
  cfg.split = 8;
  cfg.k = 1;
  cfg.context = 32;
  cfg.vocab = 320;
  auto params = avey::init_params<float>(cfg, 2);
  avey::Rng rng(3);
  std::vector<std::vector<int>> blocks(2);
  for (auto& b : blocks) {
    b.resize(cfg.context + 1);
    for (auto& t : b) t = int(avey::uniform_int(rng, cfg.vocab));
  }
  double ppl = avey::perplexity(params, blocks);
  CHECK(ppl > 0.9 * cfg.vocab);
  CHECK(ppl < 1.1 * cfg.vocab);
}

TEST_CASE("a memorized block drives perplexity toward one", "[eval]") {
  auto cfg = tiny_cfg();
  auto params = avey::init_params<double>(cfg, 5);
  auto adam = avey::AdamState<double>::make(params);
  std::vector<std::vector<int>> blocks = {{3, 1, 4, 1, 5, 8, 2, 6, 5}};
  avey::TrainConfig tc;
  tc.steps = 300;
  tc.batch = 1;
  tc.peak_lr = 3e-2;
  tc.weight_decay = 0.0;
  tc.log_every = 1000;
  auto res = avey::train(params, adam, blocks, tc);
  REQUIRE_FALSE(res.halted_non_finite);
  double ppl = avey::perplexity(params, blocks);
  CHECK(ppl < 1.2);
  // Perplexity is exp of the mean loss of the same forward, by definition.
  std::vector<int> inputs(blocks[0].begin(), blocks[0].end() - 1);
  std::vector<int> targets(blocks[0].begin() + 1, blocks[0].end());
  auto logits = avey::forward_train<double>(nullptr, params, inputs);
  double loss =
      avey::softmax_cross_entropy<double>(nullptr, logits, targets).at(0, 0);
  CHECK(ppl == Catch::Approx(std::exp(loss)).epsilon(1e-9));
}

TEST_CASE("counter audit matches the closed forms across configs",
          "[eval]") {
  auto check_cfg = [](avey::ModelConfig cfg) {
    auto rep = avey::flop_audit<float>(cfg, 11);
    INFO(avey::render_audit(rep));
    REQUIRE(rep.ok);
    for (const auto& r : rep.rows) REQUIRE(r.counted == r.expected);
  };

  SECTION("baseline") { check_cfg(tiny_cfg()); }
  SECTION("wider and deeper") {
    avey::ModelConfig cfg;
    cfg.d = 8;
    cfg.layers = 3;
    cfg.split = 4;
    cfg.k = 2;
    cfg.context = 24;
    cfg.vocab = 17;
    check_cfg(cfg);
  }
  SECTION("worked numbers surface in the expected column") {
    avey::ModelConfig cfg;
    cfg.d = 8;
    cfg.layers = 1;
    cfg.expansion = 4;
    cfg.split = 4;
    cfg.k = 1;
    cfg.context = 16;
    cfg.vocab = 17;
    auto rows = avey::expected_forward_counts(cfg);
    CHECK(rows[3].expected == 3584);
    CHECK(rows[4].expected == 1792);
    check_cfg(cfg);
  }
  SECTION("eight splits make thirty-six pairs") {
    avey::ModelConfig cfg;
    cfg.d = 8;
    cfg.layers = 1;
    cfg.split = 64;
    cfg.k = 2;
    cfg.context = 512;
    cfg.vocab = 64;
    auto rows = avey::expected_forward_counts(cfg);
    CHECK(rows[0].expected == 36);
    check_cfg(cfg);
  }
  SECTION("ablations keep their own books") {
    auto cfg = tiny_cfg();
    cfg.ablate.no_ranker = true;
    auto rows = avey::expected_forward_counts(cfg);
    CHECK(rows[0].expected == 0);
    CHECK(rows[2].expected == 0);
    check_cfg(cfg);
    auto c2 = tiny_cfg();
    c2.ablate.no_expansion = true;
    check_cfg(c2);
    auto c3 = tiny_cfg();
    c3.ablate.static_parameterization = true;
    c3.ablate.no_bypass = true;
    check_cfg(c3);
  }
}

TEST_CASE("log-log slope fit recovers power laws", "[eval]") {
  std::vector<double> x = {1, 2, 4, 8, 16};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 1.7));
  CHECK(avey::detail::loglog_slope(x, y) ==
        Catch::Approx(1.7).epsilon(1e-12));
  std::vector<double> flat = {5, 5, 5, 5, 5};
  CHECK(avey::detail::loglog_slope(x, flat) ==
        Catch::Approx(0.0).margin(1e-12));
  std::vector<double> same_x = {4, 4, 4};
  std::vector<double> yy = {1, 2, 3};
  CHECK_THROWS_AS(avey::detail::loglog_slope(same_x, yy),
                  avey::ContractViolation);
}

TEST_CASE("first-token bench reports growing counted work", "[eval]") {
  auto cfg = tiny_cfg();
  cfg.context = 64;
  auto params = avey::init_params<float>(cfg, 21);
  auto rep = avey::ttft_bench(params, {8, 16, 32}, 1, 9);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.rows[0].flops > 0);
  CHECK(rep.rows[0].flops < rep.rows[1].flops);
  CHECK(rep.rows[1].flops < rep.rows[2].flops);
  CHECK(rep.slope_flops > 0.3);
  auto text = avey::render_ttft(rep);
  CHECK(text.find("slope") != std::string::npos);

  CHECK_THROWS_AS(avey::ttft_bench(params, {8, 16}, 1, 9),
                  avey::ContractViolation);
  CHECK_THROWS_AS(avey::ttft_bench(params, {8, 16, 32}, 0, 9),
                  avey::ContractViolation);
}

TEST_CASE("retrieval sweep fills its grid deterministically", "[eval]") {
  avey::ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 1;
  cfg.split = 32;
  cfg.k = 1;
  cfg.context = 256;
  cfg.vocab = avey::kPaddedByteVocab;
  auto params = avey::init_params<float>(cfg, 31);
  auto rep = avey::niah_sweep(params, avey::NiahKind::passkey_kv, {192},
                              {0.0, 0.5, 1.0}, 2, 41, 2);
  REQUIRE(rep.cells.size() == 1);
  REQUIRE(rep.cells[0].size() == 3);
  for (const auto& cell : rep.cells[0]) REQUIRE(cell.n == 2);
  CHECK(rep.total_n == 6);
  // Two greedy bytes cannot contain a nine-digit value.
  CHECK(rep.total_correct == 0);

  auto again = avey::niah_sweep(params, avey::NiahKind::passkey_kv, {192},
                                {0.0, 0.5, 1.0}, 2, 41, 2);
  CHECK(again.total_correct == rep.total_correct);
  for (std::size_t d = 0; d < 3; ++d)
    CHECK(again.cells[0][d].correct == rep.cells[0][d].correct);

  auto text = avey::render_sweep(rep);
  CHECK(text.find("overall") != std::string::npos);

  CHECK_THROWS_AS(avey::niah_sweep(params, avey::NiahKind::passkey_kv, {},
                                   {0.5}, 1),
                  avey::ContractViolation);
}
