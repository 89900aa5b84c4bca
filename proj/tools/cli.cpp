#include "cli.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "factordiff/config.hpp"
#include "factordiff/error.hpp"
#include "factordiff/eval.hpp"
#include "factordiff/io.hpp"

namespace factordiff::cli {

namespace {

using json = nlohmann::ordered_json;

struct Options {
  // Shared by every subcommand.
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string workspace;
  std::vector<std::string> sets;
  bool dry_run = false;

  std::string data = "data";
  std::string out;
  std::string log;
  std::size_t log_every = 50;

  std::optional<int> t_prime;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;

  std::string checkpoint = "denoiser.fdck";
  std::string input;
  std::optional<std::size_t> ddim_steps;
  std::optional<std::string> guidance;
  std::optional<double> omega;
  std::optional<double> omega_free;
  bool loss_guided = false;
  std::string losses;
  std::string guide_predictor;

  std::string train;
  std::optional<std::string> augment;
  std::string denoiser;
  std::string losses_out;

  std::string predictor = "predictor.fdck";
  std::string split = "test";
  std::string edited;
  std::optional<std::size_t> top_k;
  std::optional<double> stop_loss;

  std::string param;
  std::string values;
};

struct Context {
  fs::path workspace;
  RunConfig cfg;
  bool dry_run = false;
  std::ostream& out;

  fs::path path(const std::string& p) const {
    const fs::path raw(p);
    return (raw.is_absolute() ? raw : workspace / raw).lexically_normal();
  }
  void emit(const json& record) const { out << record.dump() << '\n'; }
};

void require_file(const fs::path& p) {
  require(fs::is_regular_file(p), ErrorKind::io, "'" + p.string() + "' does not exist");
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::size_t sector_count(const fs::path& data_dir) {
  const MarketSidecar side = read_sidecar(data_dir / "market.json");
  try {
    return json::parse(side.config).at("data").at("sectors").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("market.json: ") + e.what());
  }
}

class LogSink {
 public:
  LogSink(const Context& ctx, const std::string& path, std::size_t every) : ctx_(ctx), every_(every) {
    if (!path.empty()) {
      const fs::path p = ctx.path(path);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      file_ = std::make_unique<std::ofstream>(p, std::ios::trunc);
      require(file_->good(), ErrorKind::io, "cannot open log '" + p.string() + "'");
    }
  }
  void record(const json& r, std::size_t index, bool last) {
    if (file_) *file_ << r.dump() << '\n';
    if (last || (every_ > 0 && index % every_ == 0)) ctx_.emit(r);
  }

 private:
  const Context& ctx_;
  std::size_t every_;
  std::unique_ptr<std::ofstream> file_;
};

// ---------------------------------------------------------------------------

int gen_data(Context& ctx, const Options& o) {
  const fs::path dir = ctx.path(o.out.empty() ? o.data : o.out);
  if (ctx.dry_run) {
    ctx.emit({{"event", "dry_run"}, {"command", "gen-data"}, {"out", dir.string()}});
    return 0;
  }
  const RunConfig& cfg = ctx.cfg;
  const SyntheticMarket market = gen_synthetic_market(cfg.market, cfg.seed);
  PreparedData d = prepare_datasets(market, cfg.target_stocks);
  if (cfg.label_noise > 0.0) d.target_train = inject_label_noise(d.target_train, cfg.label_noise, cfg.seed);

  fs::create_directories(dir);
  write_panel_csv(market.panel, dir / "panel.csv");
  MarketSidecar side;
  side.seed = cfg.seed;
  side.snr = cfg.market.snr;
  side.weights = market.weights;
  side.normalized_weights = normalized_weights(market.weights, d.stats);
  side.target_stocks = d.target_stocks;
  side.split = d.split;
  side.config = cfg.to_json();
  write_sidecar(side, dir / "market.json");
  save_dataset(d.source_train, dir / "source_train.fdsb");
  save_dataset(d.target_train, dir / "target_train.fdsb");
  save_dataset(d.target_valid, dir / "target_valid.fdsb");
  save_dataset(d.target_test, dir / "target_test.fdsb");
  ctx.emit({{"event", "gen-data"},
            {"out", dir.string()},
            {"source_train", d.source_train.size()},
            {"target_train", d.target_train.size()},
            {"target_valid", d.target_valid.size()},
            {"target_test", d.target_test.size()}});
  return 0;
}

int train_diffusion_cmd(Context& ctx, const Options& o) {
  const fs::path dir = ctx.path(o.data);
  const fs::path out = ctx.path(o.out.empty() ? "denoiser.fdck" : o.out);
  require_file(dir / "source_train.fdsb");
  require_file(dir / "market.json");
  if (ctx.dry_run) {
    ctx.emit({{"event", "dry_run"}, {"command", "train-diffusion"}, {"out", out.string()}});
    return 0;
  }
  const RunConfig& cfg = ctx.cfg;
  const SequenceBatch source = load_dataset(dir / "source_train.fdsb");
  DenoiserConfig dc = cfg.denoiser;
  dc.tokens = source.tokens();
  dc.factors = source.factors();
  dc.sectors = sector_count(dir);
  const double scale = stddev(source.y);
  dc.label_scale = scale > 0.0 ? scale : 1.0;
  const Schedule sched = cfg.schedule();
  const TrainedDenoiser trained = train_diffusion(source, DenoiserModel(dc, cfg.seed), sched, cfg.diffusion);

  LogSink log(ctx, o.log, o.log_every);
  for (std::size_t i = 0; i < trained.history.size(); ++i) {
    const TrainRecord& r = trained.history[i];
    json rec{{"event", "step"}, {"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"seconds", r.seconds}};
    if (r.eval_loss) rec["eval_loss"] = *r.eval_loss;
    log.record(rec, r.step, i + 1 == trained.history.size());
  }
  save_checkpoint(make_checkpoint(trained, cfg.seed, cfg.diffusion.t_prime), out);
  ctx.emit({{"event", "checkpoint"}, {"path", out.string()}, {"steps", trained.history.size()},
            {"diverged", trained.diverged}});
  require(!trained.diverged, ErrorKind::numeric,
          "training diverged after step " + std::to_string(trained.history.size()) +
              "; the last good parameters were saved");
  return 0;
}

int edit_cmd(Context& ctx, const Options& o) {
  const fs::path ckpt = ctx.path(o.checkpoint);
  const fs::path input = ctx.path(o.input.empty() ? o.data + "/target_train.fdsb" : o.input);
  const fs::path out = ctx.path(o.out.empty() ? "edited.fdsb" : o.out);
  require_file(ckpt);
  require_file(input);
  RunConfig& cfg = ctx.cfg;
  require(!cfg.edit.loss_guided || !o.losses.empty(), ErrorKind::config, "--loss-guided needs --losses");
  if (!o.losses.empty()) require_file(ctx.path(o.losses));
  require(cfg.edit.guidance.mode != GuidanceMode::predictor || !o.guide_predictor.empty(), ErrorKind::config,
          "predictor guidance needs --predictor");
  if (ctx.dry_run) {
    ctx.emit({{"event", "dry_run"}, {"command", "edit"}, {"out", out.string()}});
    return 0;
  }
  const LoadedDenoiser den = denoiser_from_checkpoint(load_checkpoint(ckpt, CheckpointKind::denoiser));
  const SequenceBatch target = load_dataset(input);
  std::optional<RegressorModel> guide;
  if (cfg.edit.guidance.mode == GuidanceMode::predictor) {
    guide = regressor_from_checkpoint(load_checkpoint(ctx.path(o.guide_predictor), CheckpointKind::regressor));
    cfg.edit.guidance.predictor = &*guide;
  }
  std::vector<double> losses;
  if (cfg.edit.loss_guided) losses = lookup_losses(read_losses(ctx.path(o.losses)), target);
  const SequenceBatch edited = edit_samples(target, den.model, den.schedule, cfg.edit, losses);
  save_dataset(edited, out);
  ctx.emit({{"event", "edit"},
            {"path", out.string()},
            {"samples", edited.size()},
            {"t_prime", cfg.edit.t_prime},
            {"fid", frechet_distance(edited, target)}});
  return 0;
}

int train_predictor_cmd(Context& ctx, const Options& o) {
  const fs::path dir = ctx.path(o.data);
  const fs::path train_path = ctx.path(o.train.empty() ? o.data + "/target_train.fdsb" : o.train);
  const fs::path out = ctx.path(o.out.empty() ? "predictor.fdck" : o.out);
  RunConfig& cfg = ctx.cfg;
  require_file(train_path);
  require_file(dir / "target_valid.fdsb");
  const bool augmenting = cfg.augment != AugmentMode::off;
  require(!augmenting || !o.denoiser.empty(), ErrorKind::config, "augmentation needs --denoiser");
  if (augmenting) require_file(ctx.path(o.denoiser));
  require(!(augmenting && cfg.edit.loss_guided) || !o.losses.empty(), ErrorKind::config,
          "loss-guided augmentation needs --losses");
  if (ctx.dry_run) {
    ctx.emit({{"event", "dry_run"}, {"command", "train-predictor"}, {"out", out.string()}});
    return 0;
  }
  SequenceBatch train = load_dataset(train_path);
  const SequenceBatch valid = load_dataset(dir / "target_valid.fdsb");
  if (const auto filter = cfg.filter()) {
    FilteredBatch f = drop_extreme_labels(train, *filter);
    ctx.emit({{"event", "label_filter"}, {"dropped", f.dropped}, {"kept", f.batch.size()}});
    train = std::move(f.batch);
  }
  RegressorConfig rc = cfg.predictor;
  rc.tokens = train.tokens();
  rc.factors = train.factors();

  std::optional<LoadedDenoiser> den;
  std::optional<RegressorModel> guide;
  TrainedRegressor trained = [&] {
    if (!augmenting) return train_regressor(train, valid, rc, cfg.predictor_train);
    den = denoiser_from_checkpoint(load_checkpoint(ctx.path(o.denoiser), CheckpointKind::denoiser));
    if (cfg.edit.guidance.mode == GuidanceMode::predictor) {
      require(!o.guide_predictor.empty(), ErrorKind::config, "predictor guidance needs --predictor");
      guide = regressor_from_checkpoint(load_checkpoint(ctx.path(o.guide_predictor), CheckpointKind::regressor));
      cfg.edit.guidance.predictor = &*guide;
    }
    std::vector<double> losses;
    if (cfg.edit.loss_guided) losses = lookup_losses(read_losses(ctx.path(o.losses)), train);
    const BatchSource source =
        augmented_source(train, den->model, den->schedule, cfg.edit, cfg.augment, std::move(losses));
    return train_regressor(source, valid, rc, cfg.predictor_train);
  }();

  LogSink log(ctx, o.log, 1);
  for (std::size_t e = 0; e < trained.train_mse.size(); ++e) {
    json rec{{"event", "epoch"}, {"epoch", e}, {"train_mse", trained.train_mse[e]}};
    if (e < trained.valid_mse.size()) rec["valid_mse"] = trained.valid_mse[e];
    log.record(rec, e, e + 1 == trained.train_mse.size());
  }
  json meta{{"seed", cfg.seed},
            {"epochs", trained.train_mse.size()},
            {"best_epoch", trained.best_epoch},
            {"augment", to_string(cfg.augment)},
            {"train_mse", trained.train_mse},
            {"valid_mse", trained.valid_mse}};
  save_checkpoint(make_checkpoint(trained.model, meta.dump()), out);
  if (!o.losses_out.empty()) write_losses(trained.sample_losses, ctx.path(o.losses_out));
  ctx.emit({{"event", "checkpoint"}, {"path", out.string()}, {"best_epoch", trained.best_epoch}});
  return 0;
}

struct Scored {
  RegressorModel model;
  SequenceBatch batch;
  FactorPanel panel;
  std::vector<double> pred;
};

Scored score(const Context& ctx, const Options& o) {
  const fs::path dir = ctx.path(o.data);
  require(o.split == "train" || o.split == "valid" || o.split == "test", ErrorKind::config,
          "--split must be train, valid or test");
  RegressorModel model =
      regressor_from_checkpoint(load_checkpoint(ctx.path(o.predictor), CheckpointKind::regressor));
  SequenceBatch batch = load_dataset(dir / ("target_" + o.split + ".fdsb"));
  FactorPanel panel = read_panel_csv(dir / "panel.csv");
  std::vector<double> pred = model.predict_batch(batch.x);
  return {std::move(model), std::move(batch), std::move(panel), std::move(pred)};
}

int evaluate_cmd(Context& ctx, const Options& o) {
  const fs::path dir = ctx.path(o.data);
  const fs::path out = ctx.path(o.out.empty() ? "report.json" : o.out);
  require_file(ctx.path(o.predictor));
  require_file(dir / "panel.csv");
  require_file(dir / ("target_" + o.split + ".fdsb"));
  if (!o.edited.empty()) require_file(ctx.path(o.edited));
  if (ctx.dry_run) {
    ctx.emit({{"event", "dry_run"}, {"command", "evaluate"}, {"out", out.string()}});
    return 0;
  }
  const Scored s = score(ctx, o);
  EvalReport r = evaluate_predictions(s.pred, s.batch, s.panel, ctx.cfg.backtest);
  if (!o.edited.empty()) {
    r.fid = frechet_distance(load_dataset(ctx.path(o.edited)), load_dataset(dir / "target_train.fdsb"));
  }
  r.config = ctx.cfg.to_json();
  write_text(out, r.to_json() + "\n");
  ctx.out << r.to_json() << '\n';
  return 0;
}

int backtest_cmd(Context& ctx, const Options& o) {
  const fs::path dir = ctx.path(o.data);
  const fs::path out = ctx.path(o.out.empty() ? "backtest.json" : o.out);
  require_file(ctx.path(o.predictor));
  require_file(dir / "panel.csv");
  if (ctx.dry_run) {
    ctx.emit({{"event", "dry_run"}, {"command", "backtest"}, {"out", out.string()}});
    return 0;
  }
  const Scored s = score(ctx, o);
  const BacktestResult bt = backtest_predictions(s.pred, s.batch, s.panel, ctx.cfg.backtest);
  json j{{"annualized_rr", bt.annualized_rr},
         {"information_ratio", bt.information_ratio},
         {"ir_degenerate", bt.ir_degenerate},
         {"top_k", ctx.cfg.backtest.top_k},
         {"stop_loss", ctx.cfg.backtest.stop_loss ? json(*ctx.cfg.backtest.stop_loss) : json(nullptr)}};
  write_text(out, json{{"summary", j}, {"days", bt.days}, {"daily", bt.daily}, {"benchmark", bt.benchmark}}.dump() +
                      "\n");
  ctx.emit(j);
  return 0;
}

std::string sweep_key(const std::string& param) {
  if (param.find('.') != std::string::npos) return param;
  if (param == "t_prime" || param == "ddim_steps" || param == "t_prime_min" || param == "t_prime_max") {
    return "edit." + param;
  }
  if (param == "omega" || param == "omega_free") return "guidance." + param;
  fail(ErrorKind::config, "cannot sweep '" + param + "'");
}

int sweep_cmd(Context& ctx, const Options& o) {
  const fs::path dir = ctx.path(o.data);
  const fs::path ckpt = ctx.path(o.checkpoint);
  const fs::path out = ctx.path(o.out.empty() ? "sweep.csv" : o.out);
  const std::string key = sweep_key(o.param);
  std::vector<std::string> values;
  {
    std::stringstream in(o.values);
    std::string v;
    while (std::getline(in, v, ',')) values.push_back(v);
  }
  require(!values.empty(), ErrorKind::config, "--values is empty");
  for (const auto& v : values) {
    RunConfig probe = ctx.cfg;
    probe.set(key, v);
    probe.validate();
  }
  require_file(ckpt);
  for (const char* f : {"target_train.fdsb", "target_valid.fdsb", "target_test.fdsb"}) require_file(dir / f);
  if (ctx.dry_run) {
    ctx.emit({{"event", "dry_run"}, {"command", "sweep"}, {"rows", values.size()}});
    return 0;
  }
  const LoadedDenoiser den = denoiser_from_checkpoint(load_checkpoint(ckpt, CheckpointKind::denoiser));
  const SequenceBatch train = load_dataset(dir / "target_train.fdsb");
  const SequenceBatch valid = load_dataset(dir / "target_valid.fdsb");
  const SequenceBatch test = load_dataset(dir / "target_test.fdsb");
  std::vector<std::int64_t> test_days;
  for (const auto& m : test.meta) test_days.push_back(m.date);

  std::string table = o.param + ",fid,ic\n";
  for (const auto& v : values) {
    RunConfig cfg = ctx.cfg;
    cfg.set(key, v);
    require(cfg.edit.guidance.mode != GuidanceMode::predictor, ErrorKind::config,
            "sweep does not support predictor guidance");
    const SequenceBatch edited = edit_samples(train, den.model, den.schedule, cfg.edit);
    const double fid = frechet_distance(edited, train);
    RegressorConfig rc = cfg.predictor;
    rc.tokens = train.tokens();
    rc.factors = train.factors();
    const TrainedRegressor reg = train_regressor(edited, valid, rc, cfg.predictor_train);
    const double ic = information_coefficient(reg.model.predict_batch(test.x), test.y, test_days);
    std::ostringstream row;
    row.precision(17);
    row << v << ',' << fid << ',' << ic << '\n';
    table += row.str();
    ctx.emit({{"event", "sweep"}, {"param", o.param}, {"value", v}, {"fid", fid}, {"ic", ic}});
  }
  write_text(out, table);
  return 0;
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "config file (sectioned key = value)");
  sub->add_option("--seed", o.seed, "base seed (overrides run.seed)");
  sub->add_option("--workers", o.workers, "worker threads (overrides run.workers)")->check(CLI::PositiveNumber);
  sub->add_option("--workspace", o.workspace, "root for relative paths (default: $FD_WORKSPACE or .)");
  sub->add_option("--set", o.sets, "override one key, e.g. --set data.stocks=200");
  sub->add_flag("--dry-run", o.dry_run, "validate the config and inputs, write nothing");
}

void apply_overrides(RunConfig& cfg, const Options& o, const std::string& command) {
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos, ErrorKind::config, "--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.workers) cfg.workers = *o.workers;
  if (command == "train-diffusion") {
    if (o.t_prime) cfg.diffusion.t_prime = *o.t_prime;
    if (o.steps) cfg.diffusion.steps = *o.steps;
    if (o.epochs) cfg.diffusion.epochs = *o.epochs;
    if (o.lr) cfg.diffusion.lr = *o.lr;
  } else {
    if (o.t_prime) cfg.edit.t_prime = *o.t_prime;
    if (o.epochs) cfg.predictor_train.epochs = *o.epochs;
    if (o.lr) cfg.predictor_train.lr = *o.lr;
  }
  if (o.ddim_steps) cfg.edit.ddim_steps = *o.ddim_steps;
  if (o.guidance) cfg.edit.guidance.mode = parse_guidance_mode(*o.guidance);
  if (o.omega) cfg.edit.guidance.omega = *o.omega;
  if (o.omega_free) cfg.edit.guidance.omega_free = *o.omega_free;
  if (o.loss_guided) cfg.edit.loss_guided = true;
  if (o.augment) cfg.augment = parse_augment_mode(*o.augment);
  if (o.top_k) cfg.backtest.top_k = *o.top_k;
  if (o.stop_loss) cfg.backtest.stop_loss = *o.stop_loss;
  cfg.sync_seeds();
  cfg.validate();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Diffusion-based augmentation for stock factor sequences", "factordiff"};
  app.require_subcommand(1);
  bool list_keys = false;
  app.add_flag("--config-keys", list_keys, "print every config key with its default and exit");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic market and its datasets");
  add_common(gen, o);
  gen->add_option("--out", o.out, "output directory (default: data)");

  auto* td = app.add_subcommand("train-diffusion", "train the denoiser on the source set");
  add_common(td, o);
  td->add_option("--data", o.data, "dataset directory");
  td->add_option("--out", o.out, "checkpoint path (default: denoiser.fdck)");
  td->add_option("--t-prime", o.t_prime, "largest training step");
  td->add_option("--steps", o.steps, "optimizer steps");
  td->add_option("--epochs", o.epochs, "passes over the source set");
  td->add_option("--lr", o.lr, "learning rate");
  td->add_option("--log", o.log, "write every step record to this file");
  td->add_option("--log-every", o.log_every, "print every n-th step record");

  auto* ed = app.add_subcommand("edit", "corrupt and denoise a dataset");
  add_common(ed, o);
  ed->add_option("--checkpoint", o.checkpoint, "denoiser checkpoint");
  ed->add_option("--data", o.data, "dataset directory");
  ed->add_option("--input", o.input, "dataset to edit (default: <data>/target_train.fdsb)");
  ed->add_option("--out", o.out, "output dataset (default: edited.fdsb)");
  ed->add_option("--t-prime", o.t_prime, "editing step");
  ed->add_option("--ddim-steps", o.ddim_steps, "sampler steps");
  ed->add_option("--guidance", o.guidance, "none, predictor or predictor_free");
  ed->add_option("--omega", o.omega, "predictor guidance strength");
  ed->add_option("--omega-free", o.omega_free, "predictor-free guidance strength");
  ed->add_flag("--loss-guided", o.loss_guided, "per-sample editing steps from training losses");
  ed->add_option("--losses", o.losses, "per-sample loss CSV");
  ed->add_option("--predictor", o.guide_predictor, "regressor checkpoint for predictor guidance");

  auto* tp = app.add_subcommand("train-predictor", "train the return regressor");
  add_common(tp, o);
  tp->add_option("--data", o.data, "dataset directory");
  tp->add_option("--train", o.train, "training set (default: <data>/target_train.fdsb)");
  tp->add_option("--out", o.out, "checkpoint path (default: predictor.fdck)");
  tp->add_option("--epochs", o.epochs, "training epochs");
  tp->add_option("--lr", o.lr, "learning rate");
  tp->add_option("--augment", o.augment, "off, fixed, per_epoch or union");
  tp->add_option("--denoiser", o.denoiser, "denoiser checkpoint for augmentation");
  tp->add_option("--t-prime", o.t_prime, "editing step for augmentation");
  tp->add_option("--ddim-steps", o.ddim_steps, "sampler steps for augmentation");
  tp->add_option("--guidance", o.guidance, "none, predictor or predictor_free");
  tp->add_option("--omega-free", o.omega_free, "predictor-free guidance strength");
  tp->add_flag("--loss-guided", o.loss_guided, "per-sample editing steps from training losses");
  tp->add_option("--losses", o.losses, "per-sample loss CSV for loss-guided editing");
  tp->add_option("--predictor", o.guide_predictor, "regressor checkpoint for predictor guidance");
  tp->add_option("--losses-out", o.losses_out, "write per-sample training losses here");
  tp->add_option("--log", o.log, "write every epoch record to this file");

  auto* ev = app.add_subcommand("evaluate", "score a regressor and write an EvalReport");
  add_common(ev, o);
  ev->add_option("--predictor", o.predictor, "regressor checkpoint");
  ev->add_option("--data", o.data, "dataset directory");
  ev->add_option("--split", o.split, "train, valid or test");
  ev->add_option("--edited", o.edited, "edited dataset for the fidelity distance");
  ev->add_option("--top-k", o.top_k, "stocks held each day");
  ev->add_option("--stop-loss", o.stop_loss, "exit ratio since entry");
  ev->add_option("--out", o.out, "report path (default: report.json)");

  auto* bt = app.add_subcommand("backtest", "top-k daily rebalanced backtest");
  add_common(bt, o);
  bt->add_option("--predictor", o.predictor, "regressor checkpoint");
  bt->add_option("--data", o.data, "dataset directory");
  bt->add_option("--split", o.split, "train, valid or test");
  bt->add_option("--top-k", o.top_k, "stocks held each day");
  bt->add_option("--stop-loss", o.stop_loss, "exit ratio since entry");
  bt->add_option("--out", o.out, "result path (default: backtest.json)");

  auto* sw = app.add_subcommand("sweep", "edit and score over a list of values");
  add_common(sw, o);
  sw->add_option("--param", o.param, "t_prime, ddim_steps, omega, omega_free or section.key")->required();
  sw->add_option("--values", o.values, "comma-separated values")->required();
  sw->add_option("--checkpoint", o.checkpoint, "denoiser checkpoint");
  sw->add_option("--data", o.data, "dataset directory");
  sw->add_option("--out", o.out, "table path (default: sweep.csv)");

  std::vector<std::string> argv_store{"factordiff"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  if (args.size() == 1 && args[0] == "--config-keys") {
    out << RunConfig::describe();
    return 0;
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << '\n';
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    std::string ws = o.workspace;
    if (ws.empty()) {
      const char* env = std::getenv("FD_WORKSPACE");
      ws = env ? env : ".";
    }
    Context ctx{fs::absolute(ws).lexically_normal(), RunConfig{}, o.dry_run, out};
    if (!o.config.empty()) ctx.cfg = RunConfig::from_file(ctx.path(o.config));
    apply_overrides(ctx.cfg, o, command);

    if (command == "gen-data") return gen_data(ctx, o);
    if (command == "train-diffusion") return train_diffusion_cmd(ctx, o);
    if (command == "edit") return edit_cmd(ctx, o);
    if (command == "train-predictor") return train_predictor_cmd(ctx, o);
    if (command == "evaluate") return evaluate_cmd(ctx, o);
    if (command == "backtest") return backtest_cmd(ctx, o);
    return sweep_cmd(ctx, o);
  } catch (const Error& e) {
    err << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: io: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
  }
  return 1;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace factordiff::cli
