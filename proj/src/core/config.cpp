#include "factordiff/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "factordiff/error.hpp"
#include "factordiff/io.hpp"

namespace factordiff {

namespace {

using json = nlohmann::ordered_json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(!s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::config,
          key + ": '" + raw + "' is not a number");
  return v;
}

template <class T>
T to_integer(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(!s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::config,
          key + ": '" + raw + "' is not a valid integer");
  return v;
}

bool to_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  fail(ErrorKind::config, key + ": '" + raw + "' is not a boolean");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& raw) {
  std::vector<std::size_t> out;
  const std::string s = trim(raw);
  if (s.empty() || s == "none") return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_integer<std::size_t>(key, item));
  return out;
}

json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<json(const RunConfig&)> get;
  std::string doc;
};

#define FD_SIZE(k, member, doc)                                                                        \
  Field{k, [](RunConfig& c, const std::string& v) { c.member = to_integer<std::size_t>(k, v); },     \
        [](const RunConfig& c) { return json(c.member); }, doc}
#define FD_INT(k, member, doc)                                                                         \
  Field{k, [](RunConfig& c, const std::string& v) { c.member = to_integer<int>(k, v); },             \
        [](const RunConfig& c) { return json(c.member); }, doc}
#define FD_U64(k, member, doc)                                                                         \
  Field{k, [](RunConfig& c, const std::string& v) { c.member = to_integer<std::uint64_t>(k, v); },   \
        [](const RunConfig& c) { return json(c.member); }, doc}
#define FD_REAL(k, member, doc)                                                                        \
  Field{k, [](RunConfig& c, const std::string& v) { c.member = to_double(k, v); },                   \
        [](const RunConfig& c) { return number(c.member); }, doc}
#define FD_BOOL(k, member, doc)                                                                        \
  Field{k, [](RunConfig& c, const std::string& v) { c.member = to_bool(k, v); },                     \
        [](const RunConfig& c) { return json(c.member); }, doc}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      FD_U64("run.seed", seed, "base seed for every random stream"),
      FD_SIZE("run.workers", workers, "editing threads (results do not depend on it)"),

      FD_SIZE("data.stocks", market.stocks, "synthetic universe size"),
      FD_SIZE("data.days", market.days, "trading days"),
      FD_SIZE("data.sectors", market.sectors, "sector count"),
      FD_SIZE("data.factors", market.factors, "factors per day"),
      FD_SIZE("data.signal_factors", market.signal_factors, "factors carrying the planted signal"),
      FD_SIZE("data.lookback", market.lookback, "window length in days"),
      FD_INT("data.horizon", market.horizon, "label horizon in days"),
      FD_REAL("data.snr", market.snr, "planted label variance over the rest"),
      FD_REAL("data.signal_persistence", market.signal_persistence, "AR(1) coefficient of signal factors"),
      FD_REAL("data.sector_persistence", market.sector_persistence, "AR(1) coefficient of sector returns"),
      FD_REAL("data.sector_share", market.sector_share, "share of return noise from the sector"),
      FD_REAL("data.daily_vol", market.daily_vol, "daily return volatility"),
      FD_REAL("data.easy_begin", market.easy_begin, "start of the high-SNR window (fraction of days)"),
      FD_REAL("data.easy_end", market.easy_end, "end of the high-SNR window (fraction of days)"),
      FD_REAL("data.easy_snr_mult", market.easy_snr_mult, "SNR multiplier inside the window"),
      FD_SIZE("data.target_stocks", target_stocks, "largest stocks forming the target set"),
      FD_REAL("data.label_noise", label_noise, "fraction of target training labels shuffled"),
      Field{"data.label_filter",
            [](RunConfig& c, const std::string& v) { c.label_filter = trim(v); },
            [](const RunConfig& c) { return json(c.label_filter); },
            "none, threshold or percentile"},
      FD_REAL("data.label_low", label_low, "lower label bound (value or percent)"),
      FD_REAL("data.label_high", label_high, "upper label bound (value or percent)"),

      FD_INT("schedule.steps", schedule_steps, "diffusion steps T"),
      FD_REAL("schedule.beta_start", beta_start, "first noise variance"),
      FD_REAL("schedule.beta_end", beta_end, "last noise variance"),

      FD_SIZE("denoiser.width", denoiser.width, "model width"),
      FD_SIZE("denoiser.heads", denoiser.heads, "attention heads"),
      FD_SIZE("denoiser.layers", denoiser.layers, "transformer blocks"),
      FD_SIZE("denoiser.ffn_mult", denoiser.ffn_mult, "feed-forward width multiple"),
      FD_BOOL("denoiser.use_label", denoiser.use_label, "condition on the label"),
      FD_BOOL("denoiser.use_industry", denoiser.use_industry, "condition on the sector"),

      FD_INT("diffusion.t_prime", diffusion.t_prime, "training steps drawn from 1..t_prime"),
      FD_SIZE("diffusion.epochs", diffusion.epochs, "passes over the source set"),
      FD_SIZE("diffusion.steps", diffusion.steps, "optimizer steps (0: from epochs)"),
      FD_SIZE("diffusion.batch_size", diffusion.batch_size, "minibatch size"),
      FD_REAL("diffusion.lr", diffusion.lr, "Adam learning rate"),
      FD_REAL("diffusion.cond_drop_prob", diffusion.cond_drop_prob, "condition dropout probability"),
      FD_INT("diffusion.eval_t_max", diffusion.eval_t_max, "held-out loss step range (0: off)"),
      FD_SIZE("diffusion.eval_every", diffusion.eval_every, "held-out loss interval"),
      FD_SIZE("diffusion.eval_samples", diffusion.eval_samples, "held-out loss sample count"),

      FD_INT("edit.t_prime", edit.t_prime, "editing step"),
      FD_SIZE("edit.ddim_steps", edit.ddim_steps, "deterministic sampler steps"),
      FD_BOOL("edit.loss_guided", edit.loss_guided, "per-sample editing steps from training loss"),
      FD_INT("edit.t_prime_min", edit.t_prime_min, "editing step for the highest loss"),
      FD_INT("edit.t_prime_max", edit.t_prime_max, "editing step for the lowest loss"),
      FD_SIZE("edit.chunk", edit.chunk, "samples per denoiser call"),

      Field{"guidance.mode",
            [](RunConfig& c, const std::string& v) { c.edit.guidance.mode = parse_guidance_mode(trim(v)); },
            [](const RunConfig& c) { return json(to_string(c.edit.guidance.mode)); },
            "none, predictor or predictor_free"},
      FD_REAL("guidance.omega", edit.guidance.omega, "predictor guidance strength"),
      FD_REAL("guidance.omega_free", edit.guidance.omega_free, "predictor-free guidance strength"),

      Field{"predictor.backbone",
            [](RunConfig& c, const std::string& v) { c.predictor.backbone = parse_backbone(trim(v)); },
            [](const RunConfig& c) { return json(to_string(c.predictor.backbone)); },
            "mlp or transformer"},
      Field{"predictor.hidden",
            [](RunConfig& c, const std::string& v) { c.predictor.hidden = to_sizes("predictor.hidden", v); },
            [](const RunConfig& c) {
              std::string s;
              for (std::size_t h : c.predictor.hidden) s += (s.empty() ? "" : ",") + std::to_string(h);
              return json(s.empty() ? "none" : s);
            },
            "MLP hidden widths, comma separated"},
      FD_SIZE("predictor.width", predictor.width, "transformer width"),
      FD_SIZE("predictor.heads", predictor.heads, "transformer heads"),
      FD_SIZE("predictor.layers", predictor.layers, "transformer blocks"),
      FD_SIZE("predictor.ffn_mult", predictor.ffn_mult, "transformer feed-forward multiple"),
      FD_SIZE("predictor.epochs", predictor_train.epochs, "training epochs"),
      FD_SIZE("predictor.batch_size", predictor_train.batch_size, "minibatch size"),
      FD_REAL("predictor.lr", predictor_train.lr, "SGD learning rate"),
      FD_REAL("predictor.momentum", predictor_train.momentum, "SGD momentum"),
      FD_REAL("predictor.weight_decay", predictor_train.weight_decay, "L2 weight decay"),
      FD_REAL("predictor.loss_decay", predictor_train.loss_decay, "per-sample loss average decay"),

      Field{"augment.mode",
            [](RunConfig& c, const std::string& v) { c.augment = parse_augment_mode(trim(v)); },
            [](const RunConfig& c) { return json(to_string(c.augment)); },
            "off, fixed, per_epoch or union"},

      FD_SIZE("backtest.top_k", backtest.top_k, "stocks held each day"),
      Field{"backtest.stop_loss",
            [](RunConfig& c, const std::string& v) {
              if (trim(v) == "none") {
                c.backtest.stop_loss.reset();
              } else {
                c.backtest.stop_loss = to_double("backtest.stop_loss", v);
              }
            },
            [](const RunConfig& c) { return c.backtest.stop_loss ? json(*c.backtest.stop_loss) : json("none"); },
            "exit ratio since entry, or none"},
      FD_REAL("backtest.annualization", backtest.annualization, "trading days per year"),
  };
  return table;
}

#undef FD_SIZE
#undef FD_INT
#undef FD_U64
#undef FD_REAL
#undef FD_BOOL

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  fail(ErrorKind::config, "unknown config key '" + key + "'");
}

std::string scalar_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

RunConfig::RunConfig() {
  market.stocks = 300;
  market.days = 600;
  denoiser.width = 32;
  denoiser.layers = 6;
  diffusion.t_prime = 1000;
  edit.guidance.mode = GuidanceMode::predictor_free;
  edit.guidance.omega_free = 3.0;
}

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, value); }

void RunConfig::apply_ini(const std::string& text) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::config, std::string("config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    require(!body.empty(), ErrorKind::config, "config key '" + section + "' must sit inside a [section]");
    for (const auto& [key, value] : body) set(section + "." + key, value.data());
  }
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  RunConfig c;
  c.apply_ini(read_text(path));
  return c;
}

void RunConfig::validate() const {
  market.validate();
  require(target_stocks >= 1 && target_stocks <= market.stocks, ErrorKind::config,
          "data.target_stocks must be in [1, data.stocks]");
  require(label_noise >= 0.0 && label_noise <= 1.0, ErrorKind::config, "data.label_noise must be in [0, 1]");
  require(label_filter == "none" || label_filter == "threshold" || label_filter == "percentile",
          ErrorKind::config, "data.label_filter must be none, threshold or percentile");
  require(label_low <= label_high, ErrorKind::config, "data.label_low must not exceed data.label_high");
  require(workers >= 1, ErrorKind::config, "run.workers must be at least 1");
  const Schedule sched = schedule();
  DenoiserConfig d = denoiser;
  d.tokens = market.lookback;
  d.factors = market.factors;
  d.sectors = market.sectors;
  d.validate();
  diffusion.validate(sched);
  EditRunConfig e = edit;
  if (e.guidance.mode == GuidanceMode::predictor && e.guidance.predictor == nullptr) {
    // The predictor is attached when a command loads it.
    require(std::isfinite(e.guidance.omega) && e.guidance.omega >= 0.0, ErrorKind::config,
            "guidance.omega must be finite and non-negative");
    e.guidance.mode = GuidanceMode::none;
  }
  e.validate(sched);
  RegressorConfig p = predictor;
  p.tokens = market.lookback;
  p.factors = market.factors;
  p.validate();
  predictor_train.validate();
  require(backtest.top_k >= 1, ErrorKind::config, "backtest.top_k must be at least 1");
  require(backtest.annualization > 0.0, ErrorKind::config, "backtest.annualization must be positive");
}

std::string RunConfig::to_json() const {
  json out = json::object();
  for (const auto& f : fields()) {
    if (f.key == "run.workers") continue;
    const auto dot = f.key.find('.');
    out[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(*this);
  }
  return out.dump();
}

std::string RunConfig::describe() {
  const RunConfig defaults;
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + scalar_text(f.get(defaults)) + "  # " + f.doc + "\n";
  return out;
}

Schedule RunConfig::schedule() const {
  try {
    return build_schedule(schedule_steps, beta_start, beta_end);
  } catch (const Error& e) {
    fail(ErrorKind::config, std::string("schedule: ") + e.what());
  }
}

std::optional<LabelFilter> RunConfig::filter() const {
  if (label_filter == "none") return std::nullopt;
  LabelFilter f;
  f.mode = label_filter == "percentile" ? LabelFilter::Mode::percentile : LabelFilter::Mode::threshold;
  f.low = label_low;
  f.high = label_high;
  return f;
}

void RunConfig::sync_seeds() {
  diffusion.seed = seed;
  edit.seed = seed;
  edit.workers = workers;
  predictor_train.seed = seed;
}

}  // namespace factordiff
