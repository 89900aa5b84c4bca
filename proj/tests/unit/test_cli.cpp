#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cli.hpp"
#include "factordiff/eval.hpp"
#include "factordiff/io.hpp"

using namespace factordiff;

namespace {

constexpr const char* kTinyConfig =
    "[data]\nstocks = 24\ndays = 90\nfactors = 4\nsignal_factors = 2\ntarget_stocks = 10\n"
    "[schedule]\nsteps = 50\n"
    "[denoiser]\nwidth = 8\nheads = 2\nlayers = 1\nffn_mult = 2\n"
    "[diffusion]\nt_prime = 50\nsteps = 5\nbatch_size = 16\n"
    "[edit]\nt_prime = 10\nddim_steps = 3\n"
    "[predictor]\nepochs = 2\nhidden = 8\n"
    "[backtest]\ntop_k = 5\n";

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / ("factordiff_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    write_text(root / "tiny.cfg", kTinyConfig);
  }
  ~Workspace() { fs::remove_all(root); }

  struct Result {
    int code;
    std::string out;
    std::string err;
  };
  Result run(std::vector<std::string> args) const {
    args.push_back("--workspace");
    args.push_back(root.string());
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
  }
  std::vector<fs::path> listing() const {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
  }
};

}  // namespace

TEST_CASE("gen-data twice gives byte-identical files") {
  const Workspace ws;
  REQUIRE(ws.run({"gen-data", "--config", "tiny.cfg", "--seed", "7", "--out", "a"}).code == 0);
  REQUIRE(ws.run({"gen-data", "--config", "tiny.cfg", "--seed", "7", "--out", "b"}).code == 0);
  REQUIRE(ws.run({"gen-data", "--config", "tiny.cfg", "--seed", "8", "--out", "c"}).code == 0);
  for (const char* f : {"panel.csv", "market.json", "source_train.fdsb", "target_train.fdsb", "target_valid.fdsb",
                        "target_test.fdsb"}) {
    CHECK(read_bytes(ws.root / "a" / f) == read_bytes(ws.root / "b" / f));
  }
  CHECK(read_bytes(ws.root / "a/panel.csv") != read_bytes(ws.root / "c/panel.csv"));
}

TEST_CASE("edit at step zero returns the input dataset") {
  const Workspace ws;
  REQUIRE(ws.run({"gen-data", "--config", "tiny.cfg"}).code == 0);
  const auto trained = ws.run({"train-diffusion", "--config", "tiny.cfg", "--log", "diff.jsonl"});
  REQUIRE(trained.code == 0);
  CHECK(trained.out.find("\"event\":\"step\"") != std::string::npos);
  CHECK(read_text(ws.root / "diff.jsonl").find("\"seconds\"") != std::string::npos);
  REQUIRE(ws.run({"edit", "--config", "tiny.cfg", "--t-prime", "0", "--out", "same.fdsb"}).code == 0);
  CHECK(read_bytes(ws.root / "same.fdsb") == read_bytes(ws.root / "data/target_train.fdsb"));

  REQUIRE(ws.run({"edit", "--config", "tiny.cfg", "--out", "w1.fdsb", "--workers", "1"}).code == 0);
  REQUIRE(ws.run({"edit", "--config", "tiny.cfg", "--out", "w3.fdsb", "--workers", "3"}).code == 0);
  CHECK(read_bytes(ws.root / "w1.fdsb") == read_bytes(ws.root / "w3.fdsb"));
  CHECK(read_bytes(ws.root / "w1.fdsb") != read_bytes(ws.root / "same.fdsb"));
}

TEST_CASE("pipeline commands chain through files") {
  const Workspace ws;
  REQUIRE(ws.run({"gen-data", "--config", "tiny.cfg"}).code == 0);
  REQUIRE(ws.run({"train-diffusion", "--config", "tiny.cfg"}).code == 0);
  REQUIRE(ws.run({"train-predictor", "--config", "tiny.cfg", "--losses-out", "losses.csv"}).code == 0);
  CHECK(!read_losses(ws.root / "losses.csv").empty());
  REQUIRE(ws.run({"train-predictor", "--config", "tiny.cfg", "--augment", "per_epoch", "--denoiser",
                  "denoiser.fdck", "--loss-guided", "--losses", "losses.csv", "--set", "edit.t_prime_min=5",
                  "--set", "edit.t_prime_max=20", "--out", "aug.fdck"})
              .code == 0);
  REQUIRE(ws.run({"edit", "--config", "tiny.cfg"}).code == 0);
  const auto ev = ws.run({"evaluate", "--config", "tiny.cfg", "--edited", "edited.fdsb"});
  REQUIRE(ev.code == 0);
  const EvalReport r = EvalReport::from_json(read_text(ws.root / "report.json"));
  CHECK(r.fid.has_value());
  CHECK(r.n_samples > 0);
  REQUIRE(ws.run({"backtest", "--config", "tiny.cfg", "--predictor", "aug.fdck"}).code == 0);
  CHECK(fs::exists(ws.root / "backtest.json"));
  const auto sw = ws.run({"sweep", "--config", "tiny.cfg", "--param", "t_prime", "--values", "5,10"});
  REQUIRE(sw.code == 0);
  const std::string table = read_text(ws.root / "sweep.csv");
  CHECK(table.rfind("t_prime,fid,ic\n5,", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
}

TEST_CASE("dry runs touch nothing") {
  const Workspace ws;
  REQUIRE(ws.run({"gen-data", "--config", "tiny.cfg"}).code == 0);
  REQUIRE(ws.run({"train-diffusion", "--config", "tiny.cfg"}).code == 0);
  REQUIRE(ws.run({"train-predictor", "--config", "tiny.cfg"}).code == 0);
  const auto before = ws.listing();
  const std::vector<std::vector<std::string>> commands = {
      {"gen-data", "--out", "fresh"},
      {"train-diffusion", "--out", "x.fdck"},
      {"edit", "--out", "x.fdsb"},
      {"train-predictor", "--out", "y.fdck"},
      {"evaluate", "--out", "r.json"},
      {"backtest", "--out", "b.json"},
      {"sweep", "--param", "t_prime", "--values", "5,10"},
  };
  for (auto args : commands) {
    args.insert(args.end(), {"--config", "tiny.cfg", "--dry-run"});
    const auto r = ws.run(args);
    INFO(args[0], ": ", r.err);
    CHECK(r.code == 0);
    CHECK(r.out.find("dry_run") != std::string::npos);
  }
  CHECK(ws.listing() == before);
}

TEST_CASE("bad flags exit 2, runtime failures exit 1") {
  const Workspace ws;
  CHECK(ws.run({}).code == 2);
  CHECK(ws.run({"frobnicate"}).code == 2);
  const auto bad = ws.run({"edit", "--no-such-flag"});
  CHECK(bad.code == 2);
  CHECK(bad.err.rfind("error: usage:", 0) == 0);
  CHECK(ws.run({"sweep", "--values", "1,2"}).code == 2);
  CHECK(ws.run({"gen-data", "--seed", "abc"}).code == 2);

  const auto missing = ws.run({"edit", "--config", "tiny.cfg"});
  CHECK(missing.code == 1);
  CHECK(missing.err.rfind("error: io:", 0) == 0);
  const auto key = ws.run({"gen-data", "--config", "tiny.cfg", "--set", "data.colour=red"});
  CHECK(key.code == 1);
  CHECK(key.err.rfind("error: config:", 0) == 0);
  const auto value = ws.run({"gen-data", "--set", "edit.t_prime=5000"});
  CHECK(value.code == 1);
  CHECK(value.err.rfind("error: config:", 0) == 0);

  write_text(ws.root / "junk.fdck", "FDCK not really");
  REQUIRE(ws.run({"gen-data", "--config", "tiny.cfg"}).code == 0);
  const auto junk = ws.run({"edit", "--config", "tiny.cfg", "--checkpoint", "junk.fdck"});
  CHECK(junk.code == 1);
  CHECK(junk.err.rfind("error: format:", 0) == 0);
  CHECK(std::count(junk.err.begin(), junk.err.end(), '\n') == 1);
}

TEST_CASE("predictor checkpoints are refused as denoisers") {
  const Workspace ws;
  REQUIRE(ws.run({"gen-data", "--config", "tiny.cfg"}).code == 0);
  REQUIRE(ws.run({"train-predictor", "--config", "tiny.cfg"}).code == 0);
  const auto r = ws.run({"edit", "--config", "tiny.cfg", "--checkpoint", "predictor.fdck"});
  CHECK(r.code == 1);
  CHECK(r.err.find("regressor") != std::string::npos);
}

TEST_CASE("help and config listing exit 0") {
  std::ostringstream out, err;
  CHECK(cli::run({"--help"}, out, err) == 0);
  CHECK(out.str().find("train-diffusion") != std::string::npos);
  std::ostringstream keys;
  CHECK(cli::run({"--config-keys"}, keys, err) == 0);
  CHECK(keys.str().find("edit.t_prime = 300") != std::string::npos);
}
