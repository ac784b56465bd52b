#include "semcsi/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "binary_io.hpp"
#include "json.hpp"
#include "semcsi/error.hpp"

namespace semcsi {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr char kDatasetMagic[] = "SMC1";
constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace

// ---- ChannelMatrix ---------------------------------------------------------

ChannelMatrix::ChannelMatrix(std::size_t n_t, std::size_t n_c) : n_t_(n_t), n_c_(n_c), data_(n_t * n_c) {}

ChannelMatrix::ChannelMatrix(std::size_t n_t, std::size_t n_c, std::vector<cplx> data)
    : n_t_(n_t), n_c_(n_c), data_(std::move(data)) {
  if (data_.size() != n_t * n_c)
    throw DimensionError("channel matrix data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(n_t) + "x" + std::to_string(n_c));
}

std::vector<cplx> ChannelMatrix::column(std::size_t subcarrier) const {
  std::vector<cplx> h(n_t_);
  for (std::size_t i = 0; i < n_t_; ++i) h[i] = (*this)(i, subcarrier);
  return h;
}

double ChannelMatrix::frobenius_sq() const {
  double s = 0.0;
  for (const auto& z : data_) s += std::norm(z);
  return s;
}

bool ChannelMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](const cplx& z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); });
}

bool ChannelMatrix::is_zero() const {
  return std::all_of(data_.begin(), data_.end(), [](const cplx& z) { return z == cplx{}; });
}

ChannelMatrix ChannelMatrix::scaled(double factor) const {
  ChannelMatrix out = *this;
  for (auto& z : out.data_) z *= factor;
  return out;
}

// ---- scenario --------------------------------------------------------------

void ScenarioConfig::validate() const {
  if (n_v * n_h != n_t)
    throw ConfigError("scenario: n_v * n_h (" + std::to_string(n_v * n_h) + ") must equal n_t (" +
                      std::to_string(n_t) + ")");
  if (n_t == 0 || n_c == 0) throw ConfigError("scenario: n_t and n_c must be >= 1");
  if (n_t > 65535 || n_c > 65535) throw ConfigError("scenario: n_t and n_c must fit in 16 bits");
  if (max_paths < min_paths || max_paths == 0) throw ConfigError("scenario: invalid path count range");
  if (!std::isfinite(gain_min_db) || !std::isfinite(gain_max_db) || gain_max_db < gain_min_db)
    throw ConfigError("scenario: invalid gain range");
  if (!(delay_spread_ns >= 0.0) || !(angle_spread_deg >= 0.0)) throw ConfigError("scenario: spreads must be >= 0");
  if (azimuth_max_deg < azimuth_min_deg || elevation_max_deg < elevation_min_deg)
    throw ConfigError("scenario: invalid angle range");
  if (!(subcarrier_spacing_khz > 0.0) || subcarriers_per_rb == 0)
    throw ConfigError("scenario: subcarrier spacing must be positive");
  if (train_fraction < 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0)
    throw ConfigError("scenario: split fractions must be >= 0 and sum to <= 1");
}

std::vector<cplx> upa_steering(std::size_t n_v, std::size_t n_h, double elevation_rad, double azimuth_rad) {
  const double pv = std::numbers::pi * std::sin(elevation_rad);
  const double ph = std::numbers::pi * std::cos(elevation_rad) * std::sin(azimuth_rad);
  std::vector<cplx> a(n_v * n_h);
  for (std::size_t v = 0; v < n_v; ++v)
    for (std::size_t h = 0; h < n_h; ++h)
      a[v * n_h + h] = std::polar(1.0, pv * static_cast<double>(v) + ph * static_cast<double>(h));
  return a;
}

double subcarrier_frequency_hz(const ScenarioConfig& cfg, std::size_t n) {
  return static_cast<double>(n * cfg.subcarriers_per_rb) * cfg.subcarrier_spacing_khz * 1e3;
}

ChannelMatrix synthesize_channel(const ScenarioConfig& cfg, std::span<const Path> paths, double amplitude) {
  ChannelMatrix h(cfg.n_t, cfg.n_c);
  for (const auto& p : paths) {
    const auto a = upa_steering(cfg.n_v, cfg.n_h, p.elevation_rad, p.azimuth_rad);
    for (std::size_t n = 0; n < cfg.n_c; ++n) {
      const cplx rot = std::polar(1.0, -2.0 * std::numbers::pi * subcarrier_frequency_hz(cfg, n) * p.delay_s);
      const cplx c = amplitude * p.gain * rot;
      for (std::size_t i = 0; i < cfg.n_t; ++i) h(i, n) += c * a[i];
    }
  }
  return h;
}

ChannelDraw draw_channel(const ScenarioConfig& cfg, Rng& rng) {
  ChannelDraw d;
  std::size_t count = 0;
  // pathless draws are rejected and redrawn
  while (count == 0)
    count = static_cast<std::size_t>(
        rng.integer(static_cast<std::int64_t>(cfg.min_paths), static_cast<std::int64_t>(cfg.max_paths)));

  const double az0 = rng.uniform(cfg.azimuth_min_deg, cfg.azimuth_max_deg);
  const double el0 = rng.uniform(cfg.elevation_min_deg, cfg.elevation_max_deg);
  std::vector<double> delays(count);
  for (auto& t : delays) t = rng.uniform(0.0, cfg.delay_spread_ns) * 1e-9;
  std::sort(delays.begin(), delays.end());

  std::vector<double> power(count);
  double total = 0.0;
  for (std::size_t p = 0; p < count; ++p) total += (power[p] = std::pow(10.0, -cfg.path_decay_db * p / 10.0));

  d.paths.resize(count);
  for (std::size_t p = 0; p < count; ++p) {
    auto& path = d.paths[p];
    path.azimuth_rad = (az0 + cfg.angle_spread_deg * rng.normal()) * kDeg;
    path.elevation_rad = (el0 + cfg.angle_spread_deg * rng.normal()) * kDeg;
    path.delay_s = delays[p];
    const double re = rng.normal(), im = rng.normal();
    path.gain = std::sqrt(power[p] / total / 2.0) * cplx(re, im);
  }
  d.gain_db = rng.uniform(cfg.gain_min_db, cfg.gain_max_db);
  return d;
}

ChannelMatrix generate_sample(const ScenarioConfig& cfg, Rng& rng) {
  for (;;) {
    const auto draw = draw_channel(cfg, rng);
    auto h = synthesize_channel(cfg, draw.paths, std::pow(10.0, draw.gain_db / 20.0));
    if (!h.is_zero() && h.all_finite()) return h;
  }
}

ChannelMatrix generate_sample(const ScenarioConfig& cfg, std::uint64_t index) {
  Rng rng = Rng::substream(cfg.seed, index);
  return generate_sample(cfg, rng);
}

// ---- dataset ---------------------------------------------------------------

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::size_t lo = 0, hi = n_train;
  if (split == Split::kVal) lo = n_train, hi = n_train + n_val;
  if (split == Split::kTest) lo = n_train + n_val, hi = samples.size();
  std::vector<std::size_t> out;
  for (std::size_t i = lo; i < hi; ++i) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::eval_indices() const {
  auto test = indices(Split::kTest);
  if (!test.empty()) return test;
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

Dataset generate_dataset(const ScenarioConfig& cfg, std::size_t count) {
  cfg.validate();
  Dataset ds;
  ds.n_t = cfg.n_t;
  ds.n_c = cfg.n_c;
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto h = generate_sample(cfg, static_cast<std::uint64_t>(i));
    for (auto& z : h.data()) z = cplx(static_cast<float>(z.real()), static_cast<float>(z.imag()));
    ds.samples.push_back(std::move(h));
  }
  ds.n_train = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(count)));
  ds.n_val = std::min(count - ds.n_train,
                      static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(count))));
  nlohmann::ordered_json meta;
  meta["scenario"] = nlohmann::ordered_json::parse(scenario_to_json(cfg));
  meta["split"] = {{"train", ds.n_train}, {"val", ds.n_val}, {"test", ds.n_test()}};
  ds.metadata = meta.dump();
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  if (ds.n_t > 65535 || ds.n_c > 65535) throw ConfigError("dataset dims exceed 16-bit header fields");
  detail::ByteWriter w;
  w.bytes(std::string_view(kDatasetMagic, 4));
  w.uint<std::uint32_t>(kDatasetVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ds.samples.size()));
  w.uint<std::uint16_t>(static_cast<std::uint16_t>(ds.n_t));
  w.uint<std::uint16_t>(static_cast<std::uint16_t>(ds.n_c));
  w.uint<std::uint32_t>(0);
  for (const auto& h : ds.samples) {
    if (h.n_t() != ds.n_t || h.n_c() != ds.n_c) throw DimensionError("dataset sample dims differ from header");
    for (const auto& z : h.data()) {
      w.f32(static_cast<float>(z.real()));
      w.f32(static_cast<float>(z.imag()));
    }
  }
  if (!ds.metadata.empty()) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(ds.metadata.size()));
    w.bytes(ds.metadata);
  }
  w.save(path);
}

namespace {

DatasetHeader parse_header(detail::ByteReader& r) {
  if (r.bytes(4, "magic") != std::string_view(kDatasetMagic, 4))
    throw FormatError("magic", "not an SMC1 dataset file");
  DatasetHeader h;
  h.version = r.uint<std::uint32_t>("version");
  if (h.version != kDatasetVersion)
    throw FormatError("version", "unsupported version " + std::to_string(h.version));
  h.count = r.uint<std::uint32_t>("count");
  h.n_t = r.uint<std::uint16_t>("n_t");
  h.n_c = r.uint<std::uint16_t>("n_c");
  if (r.uint<std::uint32_t>("reserved") != 0) throw FormatError("reserved", "must be zero");
  if (h.n_t == 0 || h.n_c == 0) throw FormatError(h.n_t == 0 ? "n_t" : "n_c", "must be positive");
  return h;
}

}  // namespace

DatasetHeader read_dataset_header(const std::filesystem::path& path) {
  auto r = detail::ByteReader::from_file(path);
  return parse_header(r);
}

Dataset read_dataset(const std::filesystem::path& path) {
  auto r = detail::ByteReader::from_file(path);
  const auto hdr = parse_header(r);
  Dataset ds;
  ds.n_t = hdr.n_t;
  ds.n_c = hdr.n_c;
  const std::size_t per = static_cast<std::size_t>(hdr.n_t) * hdr.n_c;
  r.need(static_cast<std::size_t>(hdr.count) * per * 8, "payload");
  ds.samples.reserve(hdr.count);
  for (std::uint32_t s = 0; s < hdr.count; ++s) {
    std::vector<cplx> data(per);
    for (auto& z : data) {
      const float re = r.f32("payload");
      const float im = r.f32("payload");
      z = cplx(re, im);
    }
    ds.samples.emplace_back(hdr.n_t, hdr.n_c, std::move(data));
  }
  ds.n_train = ds.samples.size();
  if (!r.at_end()) {
    const auto len = r.uint<std::uint32_t>("metadata_length");
    ds.metadata = r.bytes(len, "metadata");
    if (!r.at_end()) throw FormatError("metadata", "trailing bytes after metadata block");
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(ds.metadata);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("metadata", std::string("invalid JSON: ") + e.what());
    }
    if (meta.contains("split")) {
      const auto tr = meta["split"].value("train", std::size_t{0});
      const auto va = meta["split"].value("val", std::size_t{0});
      if (tr + va > ds.samples.size()) throw FormatError("metadata", "split sizes exceed sample count");
      ds.n_train = tr;
      ds.n_val = va;
    }
  }
  return ds;
}

// ---- JSON ------------------------------------------------------------------

std::string scenario_to_json(const ScenarioConfig& c) {
  nlohmann::ordered_json j;
  ScenarioConfig::for_each_field(c, [&](const char* key, const auto& field) { j[key] = field; });
  return j.dump();
}

ScenarioConfig scenario_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ScenarioConfig c;
  ScenarioConfig::for_each_field(c, [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  });
  return c;
}

}  // namespace semcsi
