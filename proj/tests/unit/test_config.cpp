#include <doctest.h>

#include <string>

#include <json.hpp>

#include "factordiff/config.hpp"
#include "factordiff/error.hpp"

using namespace factordiff;

TEST_CASE("defaults validate and mirror the tuned values") {
  const RunConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.edit.t_prime == 300);
  CHECK(c.edit.guidance.mode == GuidanceMode::predictor_free);
  CHECK(c.edit.guidance.omega_free == 3.0);
  CHECK(c.denoiser.layers == 6);
  CHECK(c.denoiser.use_label);
  CHECK(c.denoiser.use_industry);
  CHECK(c.market.lookback == 8);
  CHECK(!c.backtest.stop_loss.has_value());
  CHECK(c.augment == AugmentMode::off);
  CHECK(!c.filter().has_value());
}

TEST_CASE("ini values override defaults") {
  RunConfig c;
  c.apply_ini(
      "[run]\nseed = 42\nworkers = 3\n"
      "[data]\nstocks = 50\nsnr = 0.5\nlabel_filter = percentile\nlabel_low = 2.5\nlabel_high = 97.5\n"
      "[guidance]\nmode = none\n"
      "[predictor]\nbackbone = transformer\nhidden = 16, 8\n"
      "[augment]\nmode = union\n"
      "[backtest]\nstop_loss = 0.965\n");
  CHECK(c.seed == 42);
  CHECK(c.workers == 3);
  CHECK(c.market.stocks == 50);
  CHECK(c.market.snr == 0.5);
  CHECK(c.edit.guidance.mode == GuidanceMode::none);
  CHECK(c.predictor.backbone == Backbone::transformer);
  CHECK(c.predictor.hidden == std::vector<std::size_t>{16, 8});
  CHECK(c.augment == AugmentMode::union_raw);
  CHECK(c.backtest.stop_loss.value() == 0.965);
  const auto f = c.filter();
  REQUIRE(f.has_value());
  CHECK(f->mode == LabelFilter::Mode::percentile);
  CHECK(f->low == 2.5);
  c.sync_seeds();
  CHECK(c.diffusion.seed == 42);
  CHECK(c.edit.seed == 42);
  CHECK(c.edit.workers == 3);
  CHECK(c.predictor_train.seed == 42);
}

TEST_CASE("unknown keys and bad values are rejected") {
  RunConfig c;
  CHECK_THROWS_WITH_AS(c.apply_ini("[data]\nstonks = 5\n"), doctest::Contains("data.stonks"), Error);
  CHECK_THROWS_AS(c.apply_ini("[nosuch]\nseed = 1\n"), Error);
  CHECK_THROWS_AS(c.apply_ini("seed = 1\n"), Error);
  CHECK_THROWS_AS(c.apply_ini("[data]\nstocks = many\n"), Error);
  CHECK_THROWS_AS(c.apply_ini("[data]\nstocks = -3\n"), Error);
  CHECK_THROWS_AS(c.apply_ini("[denoiser]\nuse_label = maybe\n"), Error);
  CHECK_THROWS_AS(c.apply_ini("[guidance]\nmode = sideways\n"), Error);
  CHECK_THROWS_AS(c.apply_ini("[data\n"), Error);
  try {
    c.set("edit.nope", "1");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
}

TEST_CASE("validation catches inconsistent settings") {
  RunConfig c;
  c.edit.t_prime = 5000;
  CHECK_THROWS_AS(c.validate(), Error);
  c = RunConfig{};
  c.target_stocks = c.market.stocks + 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = RunConfig{};
  c.edit.guidance.omega_free = 0.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = RunConfig{};
  c.edit.guidance.mode = GuidanceMode::predictor;
  CHECK_NOTHROW(c.validate());
  c.edit.guidance.omega = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = RunConfig{};
  c.label_filter = "sometimes";
  CHECK_THROWS_AS(c.validate(), Error);
  c = RunConfig{};
  c.schedule_steps = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("json echo covers every key except workers") {
  RunConfig a;
  RunConfig b;
  b.workers = 8;
  CHECK(a.to_json() == b.to_json());
  b.seed = 1;
  CHECK(a.to_json() != b.to_json());
  const auto j = nlohmann::json::parse(a.to_json());
  CHECK(!j.at("run").contains("workers"));
  CHECK(j.at("data").at("label_low") == "-inf");
  std::size_t described = 0;
  const std::string text = RunConfig::describe();
  for (char ch : text) described += ch == '\n';
  std::size_t echoed = 0;
  for (const auto& [section, body] : j.items()) echoed += body.size();
  CHECK(described == echoed + 1);
}

TEST_CASE("describe output parses back to the defaults") {
  std::string ini;
  std::string section;
  const std::string text = RunConfig::describe();
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    std::string line = text.substr(start, end - start);
    start = end + 1;
    line = line.substr(0, line.find("  #"));
    const std::size_t dot = line.find('.');
    const std::string s = line.substr(0, dot);
    if (s != section) {
      ini += "[" + s + "]\n";
      section = s;
    }
    ini += line.substr(dot + 1) + "\n";
  }
  RunConfig c;
  c.apply_ini(ini);
  CHECK(c.to_json() == RunConfig{}.to_json());
}
