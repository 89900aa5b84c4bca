#include "factordiff/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "factordiff/error.hpp"

namespace factordiff {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

using json = nlohmann::ordered_json;

constexpr char kDatasetMagic[4] = {'F', 'D', 'S', 'B'};
constexpr char kCheckpointMagic[4] = {'F', 'D', 'C', 'K'};
constexpr const char* kSections[] = {"CONF", "SCHD", "TENS", "META"};
constexpr const char* kFooter = "CKSM";
constexpr const char* kTargetMean = "target.mean";
constexpr const char* kTargetStd = "target.std";

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <class T>
  void put(T v) {
    raw(&v, sizeof(T));
  }
  void doubles(std::span<const double> v) { raw(v.data(), v.size() * sizeof(double)); }
  void text(const std::string& s) { raw(s.data(), s.size()); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

  void need(std::size_t n, const std::string& part) const {
    require(n <= remaining(), ErrorKind::format, what_ + " truncated while reading " + part);
  }
  template <class T>
  T get(const std::string& part) {
    need(sizeof(T), part);
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::vector<double> doubles(std::size_t n, const std::string& part) {
    require(n <= remaining() / sizeof(double), ErrorKind::format, what_ + " truncated while reading " + part);
    std::vector<double> v(n);
    std::memcpy(v.data(), data_ + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::string text(std::size_t n, const std::string& part) {
    need(n, part);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(std::string_view s, const std::string& where) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::format,
          where + ": cannot parse '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::format, what + ": " + e.what());
  }
}

json stats_to_json(const RobustStats& s) {
  json j;
  j["median"] = s.median;
  j["mad"] = s.mad;
  j["constant"] = s.constant;
  j["warnings"] = s.warnings;
  return j;
}

RobustStats stats_from_json(const json& j) {
  RobustStats s;
  s.median = j.at("median").get<std::vector<double>>();
  s.mad = j.at("mad").get<std::vector<double>>();
  s.constant = j.at("constant").get<std::vector<bool>>();
  s.warnings = j.at("warnings").get<std::vector<std::string>>();
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::io, "failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------

void save_dataset(const SequenceBatch& batch, const fs::path& path) {
  batch.validate();
  Writer w;
  w.raw(kDatasetMagic, 4);
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint64_t>(batch.size());
  w.put<std::uint64_t>(batch.tokens());
  w.put<std::uint64_t>(batch.factors());
  w.doubles(batch.x.values());
  w.doubles(batch.y);
  json meta;
  std::vector<std::int64_t> stock, date;
  std::vector<std::int32_t> sector;
  for (const auto& m : batch.meta) {
    stock.push_back(m.stock);
    date.push_back(m.date);
    sector.push_back(m.sector);
  }
  meta["stock"] = stock;
  meta["date"] = date;
  meta["sector"] = sector;
  meta["stats"] = batch.stats ? stats_to_json(*batch.stats) : json(nullptr);
  const std::string text = meta.dump();
  w.put<std::uint64_t>(text.size());
  w.text(text);
  write_bytes(path, w.bytes());
}

SequenceBatch load_dataset(const fs::path& path) {
  const auto bytes = read_bytes(path);
  Reader r(bytes.data(), bytes.size(), "dataset '" + path.string() + "'");
  const std::string magic = r.text(4, "the magic bytes");
  require(magic == std::string(kDatasetMagic, 4), ErrorKind::format,
          "'" + path.string() + "' is not a dataset file (bad magic)");
  const auto version = r.get<std::uint32_t>("the version");
  require(version == kDatasetVersion, ErrorKind::format,
          "dataset version " + std::to_string(version) + " is not supported (expected " +
              std::to_string(kDatasetVersion) + ")");
  const auto n = r.get<std::uint64_t>("the header");
  const auto k = r.get<std::uint64_t>("the header");
  const auto d = r.get<std::uint64_t>("the header");
  SequenceBatch b;
  b.x = Tensor({n, k, d}, r.doubles(n * k * d, "the factor block"));
  b.y = r.doubles(n, "the label block");
  const auto len = r.get<std::uint64_t>("the metadata block");
  const json meta = parse_json(r.text(len, "the metadata block"), "dataset metadata");
  try {
    const auto stock = meta.at("stock").get<std::vector<std::int64_t>>();
    const auto date = meta.at("date").get<std::vector<std::int64_t>>();
    const auto sector = meta.at("sector").get<std::vector<std::int32_t>>();
    require(stock.size() == n && date.size() == n && sector.size() == n, ErrorKind::format,
            "dataset metadata has the wrong number of entries");
    for (std::size_t i = 0; i < n; ++i) b.meta.push_back({stock[i], date[i], sector[i]});
    if (!meta.at("stats").is_null()) b.stats = stats_from_json(meta.at("stats"));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("dataset metadata: ") + e.what());
  }
  require(r.remaining() == 0, ErrorKind::format, "dataset '" + path.string() + "' has trailing bytes");
  b.validate();
  return b;
}

void write_panel_csv(const FactorPanel& panel, const fs::path& path) {
  panel.validate();
  std::string out = "date,stock_id,sector_id,close";
  for (std::size_t j = 0; j < panel.factors; ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t t = 0; t < panel.days; ++t) {
    for (std::size_t s = 0; s < panel.stocks; ++s) {
      out += std::to_string(t) + ',' + std::to_string(s) + ',' + std::to_string(panel.sector[s]) + ',' +
             format_double(panel.close_at(s, t));
      for (double v : panel.factor_row(s, t)) {
        out += ',';
        out += format_double(v);
      }
      out += '\n';
    }
  }
  write_text(path, out);
}

FactorPanel read_panel_csv(const fs::path& path) {
  const std::string text = read_text(path);
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::format, "panel '" + path.string() + "' is empty");
  const auto header = split_commas(line);
  require(header.size() >= 4 && header[0] == "date" && header[1] == "stock_id" && header[2] == "sector_id" &&
              header[3] == "close",
          ErrorKind::format, "panel header must start with date,stock_id,sector_id,close");
  const std::size_t d = header.size() - 4;
  for (std::size_t j = 0; j < d; ++j) {
    require(header[4 + j] == "f" + std::to_string(j), ErrorKind::format,
            "panel header column " + std::to_string(4 + j) + " should be f" + std::to_string(j));
  }
  struct Row {
    std::size_t date, stock;
    int sector;
    double close;
    std::vector<double> f;
  };
  std::vector<Row> rows;
  std::size_t days = 0, stocks = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    const std::string where = "panel line " + std::to_string(lineno);
    require(cells.size() == 4 + d, ErrorKind::format, where + ": expected " + std::to_string(4 + d) + " columns");
    Row r{parse_number<std::size_t>(cells[0], where), parse_number<std::size_t>(cells[1], where),
          parse_number<int>(cells[2], where), parse_number<double>(cells[3], where), {}};
    for (std::size_t j = 0; j < d; ++j) r.f.push_back(parse_number<double>(cells[4 + j], where));
    days = std::max(days, r.date + 1);
    stocks = std::max(stocks, r.stock + 1);
    rows.push_back(std::move(r));
  }
  require(rows.size() == days * stocks, ErrorKind::format,
          "panel '" + path.string() + "' does not cover every (date, stock) pair");
  FactorPanel p;
  p.stocks = stocks;
  p.days = days;
  p.factors = d;
  p.sector.assign(stocks, -1);
  p.close.assign(stocks * days, 0.0);
  p.values.assign(stocks * days * d, 0.0);
  std::vector<bool> seen(stocks * days, false);
  for (const auto& r : rows) {
    const std::size_t at = r.stock * days + r.date;
    require(!seen[at], ErrorKind::format,
            "panel repeats stock " + std::to_string(r.stock) + " on date " + std::to_string(r.date));
    seen[at] = true;
    require(p.sector[r.stock] < 0 || p.sector[r.stock] == r.sector, ErrorKind::format,
            "panel stock " + std::to_string(r.stock) + " changes sector");
    p.sector[r.stock] = r.sector;
    p.close[at] = r.close;
    std::copy(r.f.begin(), r.f.end(), p.values.begin() + static_cast<std::ptrdiff_t>(at * d));
  }
  p.validate();
  return p;
}

void write_sidecar(const MarketSidecar& s, const fs::path& path) {
  json j;
  j["seed"] = s.seed;
  j["snr"] = s.snr;
  j["weights"] = s.weights;
  j["normalized_weights"] = s.normalized_weights;
  j["target_stocks"] = s.target_stocks;
  j["split"] = {{"train_end", s.split.train_end}, {"valid_end", s.split.valid_end}, {"days", s.split.days}};
  j["config"] = parse_json(s.config, "sidecar config");
  write_text(path, j.dump(2) + "\n");
}

MarketSidecar read_sidecar(const fs::path& path) {
  const json j = parse_json(read_text(path), "sidecar '" + path.string() + "'");
  try {
    MarketSidecar s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.snr = j.at("snr").get<double>();
    s.weights = j.at("weights").get<std::vector<double>>();
    s.normalized_weights = j.at("normalized_weights").get<std::vector<double>>();
    s.target_stocks = j.at("target_stocks").get<std::vector<std::size_t>>();
    s.split.train_end = j.at("split").at("train_end").get<std::int64_t>();
    s.split.valid_end = j.at("split").at("valid_end").get<std::int64_t>();
    s.split.days = j.at("split").at("days").get<std::int64_t>();
    s.config = j.at("config").dump();
    return s;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, "sidecar '" + path.string() + "': " + e.what());
  }
}

void write_losses(const LossRegistry& losses, const fs::path& path) {
  std::string out = "stock_id,date,loss\n";
  for (const auto& [key, loss] : losses) {
    out += std::to_string(key.first) + ',' + std::to_string(key.second) + ',' + format_double(loss) + '\n';
  }
  write_text(path, out);
}

LossRegistry read_losses(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  require(std::getline(in, line) && line == "stock_id,date,loss", ErrorKind::format,
          "loss file '" + path.string() + "' must start with stock_id,date,loss");
  LossRegistry out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    const std::string where = "loss file line " + std::to_string(lineno);
    require(cells.size() == 3, ErrorKind::format, where + ": expected 3 columns");
    out[{parse_number<std::int64_t>(cells[0], where), parse_number<std::int64_t>(cells[1], where)}] =
        parse_number<double>(cells[2], where);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(CheckpointKind kind) {
  switch (kind) {
    case CheckpointKind::denoiser: return "denoiser";
    case CheckpointKind::regressor: return "regressor";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.kind));

  auto section = [&w](const char* tag, const Writer& body) {
    w.raw(tag, 4);
    auto& b = const_cast<Writer&>(body).bytes();
    w.put<std::uint64_t>(b.size());
    w.raw(b.data(), b.size());
  };
  Writer conf;
  conf.text(ckpt.config);
  section(kSections[0], conf);

  Writer schd;
  schd.put<std::uint64_t>(ckpt.betas.size());
  schd.doubles(ckpt.betas);
  section(kSections[1], schd);

  Writer tens;
  tens.put<std::uint64_t>(ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    tens.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    tens.text(name);
    tens.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) tens.put<std::uint64_t>(dim);
    tens.doubles(t.values());
  }
  section(kSections[2], tens);

  Writer meta;
  meta.text(ckpt.metadata);
  section(kSections[3], meta);

  const std::uint64_t sum = fnv1a(w.bytes().data(), w.bytes().size());
  w.raw(kFooter, 4);
  w.put<std::uint64_t>(sum);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, std::optional<CheckpointKind> expected) {
  Reader r(bytes.data(), bytes.size(), "checkpoint");
  require(r.remaining() >= 4 && r.text(4, "the magic bytes") == std::string(kCheckpointMagic, 4),
          ErrorKind::format, "not a checkpoint file (bad magic)");
  const auto version = r.get<std::uint32_t>("the version");
  require(version == kCheckpointVersion, ErrorKind::format,
          "checkpoint version " + std::to_string(version) + " is not supported (expected " +
              std::to_string(kCheckpointVersion) + ")");
  const auto kind_tag = r.get<std::uint32_t>("the kind tag");
  require(kind_tag == 1 || kind_tag == 2, ErrorKind::format, "unknown checkpoint kind " + std::to_string(kind_tag));
  Checkpoint ckpt;
  ckpt.kind = static_cast<CheckpointKind>(kind_tag);
  if (expected) {
    require(*expected == ckpt.kind, ErrorKind::format,
            "checkpoint holds a " + to_string(ckpt.kind) + ", expected a " + to_string(*expected));
  }

  std::vector<std::string> bodies;
  for (const char* tag : kSections) {
    const std::string name(tag);
    require(r.remaining() > 0, ErrorKind::format, "checkpoint truncated: missing section " + name);
    const std::string got = r.text(4, "the tag of section " + name);
    require(got == name, ErrorKind::format, "checkpoint section " + name + " expected, found '" + got + "'");
    const auto len = r.get<std::uint64_t>("the length of section " + name);
    require(len <= r.remaining(), ErrorKind::format, "checkpoint truncated inside section " + name);
    bodies.push_back(r.text(len, "section " + name));
  }
  const std::size_t summed = r.position();
  require(r.remaining() > 0, ErrorKind::format, "checkpoint truncated: missing section " + std::string(kFooter));
  const std::string footer = r.text(4, "the checksum tag");
  require(footer == kFooter, ErrorKind::format, "checkpoint checksum section expected");
  const auto stored = r.get<std::uint64_t>("section " + std::string(kFooter));
  require(r.remaining() == 0, ErrorKind::format, "checkpoint has trailing bytes");
  require(stored == fnv1a(bytes.data(), summed), ErrorKind::format, "checkpoint checksum mismatch");

  ckpt.config = bodies[0];
  {
    const auto& b = bodies[1];
    Reader s(reinterpret_cast<const std::uint8_t*>(b.data()), b.size(), "checkpoint section SCHD");
    ckpt.betas = s.doubles(s.get<std::uint64_t>("the step count"), "the beta values");
  }
  {
    const auto& b = bodies[2];
    Reader s(reinterpret_cast<const std::uint8_t*>(b.data()), b.size(), "checkpoint section TENS");
    const auto count = s.get<std::uint64_t>("the tensor count");
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::string name = s.text(s.get<std::uint32_t>("a tensor name"), "a tensor name");
      const auto rank = s.get<std::uint32_t>("the rank of " + name);
      Shape shape;
      for (std::uint32_t a = 0; a < rank; ++a) shape.push_back(s.get<std::uint64_t>("the shape of " + name));
      ckpt.tensors.emplace(name, Tensor(shape, s.doubles(element_count(shape), "the values of " + name)));
    }
  }
  ckpt.metadata = bodies[3];
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) { write_bytes(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path, std::optional<CheckpointKind> expected) {
  try {
    return decode_checkpoint(read_bytes(path), expected);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::format) throw;
    fail(ErrorKind::format, "'" + path.string() + "': " + e.what());
  }
}

std::string config_to_json(const DenoiserConfig& c) {
  json j;
  j["tokens"] = c.tokens;
  j["factors"] = c.factors;
  j["width"] = c.width;
  j["heads"] = c.heads;
  j["layers"] = c.layers;
  j["ffn_mult"] = c.ffn_mult;
  j["sectors"] = c.sectors;
  j["use_label"] = c.use_label;
  j["use_industry"] = c.use_industry;
  j["label_scale"] = c.label_scale;
  return j.dump();
}

DenoiserConfig denoiser_config_from_json(const std::string& text) {
  const json j = parse_json(text, "denoiser config");
  try {
    DenoiserConfig c;
    c.tokens = j.at("tokens").get<std::size_t>();
    c.factors = j.at("factors").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
    c.sectors = j.at("sectors").get<std::size_t>();
    c.use_label = j.at("use_label").get<bool>();
    c.use_industry = j.at("use_industry").get<bool>();
    c.label_scale = j.at("label_scale").get<double>();
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("denoiser config: ") + e.what());
  }
}

std::string config_to_json(const RegressorConfig& c) {
  json j;
  j["backbone"] = to_string(c.backbone);
  j["tokens"] = c.tokens;
  j["factors"] = c.factors;
  j["hidden"] = c.hidden;
  j["width"] = c.width;
  j["heads"] = c.heads;
  j["layers"] = c.layers;
  j["ffn_mult"] = c.ffn_mult;
  return j.dump();
}

RegressorConfig regressor_config_from_json(const std::string& text) {
  const json j = parse_json(text, "regressor config");
  try {
    RegressorConfig c;
    c.backbone = parse_backbone(j.at("backbone").get<std::string>());
    c.tokens = j.at("tokens").get<std::size_t>();
    c.factors = j.at("factors").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.width = j.at("width").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("regressor config: ") + e.what());
  }
}

Checkpoint make_checkpoint(const TrainedDenoiser& trained, std::uint64_t seed, int t_prime) {
  json meta;
  meta["seed"] = seed;
  meta["t_prime"] = t_prime;
  meta["steps"] = trained.history.size();
  meta["final_loss"] = trained.history.empty() ? json(nullptr) : json(trained.history.back().loss);
  meta["diverged"] = trained.diverged;
  json history = json::array();
  for (const auto& r : trained.history) {
    json e;
    e["step"] = r.step;
    e["loss"] = std::isfinite(r.loss) ? json(r.loss) : json(nullptr);
    e["eval_loss"] = r.eval_loss ? json(*r.eval_loss) : json(nullptr);
    history.push_back(e);
  }
  meta["history"] = history;
  return make_checkpoint(trained.model, trained.schedule, meta.dump());
}

Checkpoint make_checkpoint(const DenoiserModel& model, const Schedule& sched, std::string metadata) {
  Checkpoint c;
  c.kind = CheckpointKind::denoiser;
  c.config = config_to_json(model.config());
  c.betas = sched.betas();
  c.tensors = model.parameters();
  c.metadata = std::move(metadata);
  return c;
}

Checkpoint make_checkpoint(const RegressorModel& model, std::string metadata) {
  Checkpoint c;
  c.kind = CheckpointKind::regressor;
  c.config = config_to_json(model.config());
  c.tensors = model.parameters();
  c.tensors.emplace(kTargetMean, Tensor({1}, {model.target_mean()}));
  c.tensors.emplace(kTargetStd, Tensor({1}, {model.target_std()}));
  c.metadata = std::move(metadata);
  return c;
}

LoadedDenoiser denoiser_from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.kind == CheckpointKind::denoiser, ErrorKind::format,
          "checkpoint holds a " + to_string(ckpt.kind) + ", expected a denoiser");
  require(!ckpt.betas.empty(), ErrorKind::format, "denoiser checkpoint has no schedule");
  return {DenoiserModel(denoiser_config_from_json(ckpt.config), ckpt.tensors), Schedule(ckpt.betas)};
}

RegressorModel regressor_from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.kind == CheckpointKind::regressor, ErrorKind::format,
          "checkpoint holds a " + to_string(ckpt.kind) + ", expected a regressor");
  ParameterSet params = ckpt.tensors;
  auto take = [&params](const char* name) {
    auto it = params.find(name);
    require(it != params.end() && it->second.size() == 1, ErrorKind::format,
            std::string("regressor checkpoint lacks ") + name);
    const double v = it->second[0];
    params.erase(it);
    return v;
  };
  const double mean = take(kTargetMean);
  const double stddev = take(kTargetStd);
  return RegressorModel(regressor_config_from_json(ckpt.config), std::move(params), mean, stddev);
}

}  // namespace factordiff
