#pragma once

// Synthetic clustered-multipath spatial-frequency channels for a BS with a
// uniform planar array, and the SMC1 dataset file format.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "semcsi/rng.hpp"

namespace semcsi {

using cplx = std::complex<double>;

/// Downlink CSI of one user: N_t antennas x N_c subcarriers, stored
/// antenna-major (entry (i, n) at i * N_c + n).
class ChannelMatrix {
 public:
  ChannelMatrix() = default;
  ChannelMatrix(std::size_t n_t, std::size_t n_c);
  ChannelMatrix(std::size_t n_t, std::size_t n_c, std::vector<cplx> data);

  std::size_t n_t() const { return n_t_; }
  std::size_t n_c() const { return n_c_; }

  cplx& operator()(std::size_t antenna, std::size_t subcarrier) { return data_[antenna * n_c_ + subcarrier]; }
  cplx operator()(std::size_t antenna, std::size_t subcarrier) const { return data_[antenna * n_c_ + subcarrier]; }

  std::span<const cplx> data() const& { return data_; }
  std::span<cplx> data() & { return data_; }

  /// Column h_n (all antennas of one subcarrier).
  std::vector<cplx> column(std::size_t subcarrier) const;
  double frobenius_sq() const;
  bool all_finite() const;
  bool is_zero() const;

  ChannelMatrix scaled(double factor) const;

  friend bool operator==(const ChannelMatrix&, const ChannelMatrix&) = default;

 private:
  std::size_t n_t_ = 0;
  std::size_t n_c_ = 0;
  std::vector<cplx> data_;
};

struct ScenarioConfig {
  std::size_t n_t = 32;
  std::size_t n_v = 4;  // vertical elements
  std::size_t n_h = 8;  // horizontal elements
  std::size_t n_c = 52;
  double carrier_ghz = 3.5;
  double subcarrier_spacing_khz = 30.0;
  std::size_t subcarriers_per_rb = 12;  // one sampled subcarrier per RB
  std::size_t min_paths = 2;
  std::size_t max_paths = 6;
  double azimuth_min_deg = -60.0;
  double azimuth_max_deg = 60.0;
  double elevation_min_deg = -30.0;
  double elevation_max_deg = 0.0;
  double angle_spread_deg = 5.0;     // per-path deviation around the cluster centre
  double delay_spread_ns = 300.0;    // path delays ~ U[0, delay_spread]
  double path_decay_db = 3.0;        // mean power drop per later-arriving path
  double gain_min_db = -140.0;       // per-user large-scale gain range
  double gain_max_db = -110.0;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;
  double val_fraction = 0.1;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  /// Visits (key, field) for every configurable field; shared by the config
  /// file reader and the JSON snapshots.
  template <class Self, class F>
  static void for_each_field(Self& c, F&& f) {
    f("n_t", c.n_t);
    f("n_v", c.n_v);
    f("n_h", c.n_h);
    f("n_c", c.n_c);
    f("carrier_ghz", c.carrier_ghz);
    f("subcarrier_spacing_khz", c.subcarrier_spacing_khz);
    f("subcarriers_per_rb", c.subcarriers_per_rb);
    f("min_paths", c.min_paths);
    f("max_paths", c.max_paths);
    f("azimuth_min_deg", c.azimuth_min_deg);
    f("azimuth_max_deg", c.azimuth_max_deg);
    f("elevation_min_deg", c.elevation_min_deg);
    f("elevation_max_deg", c.elevation_max_deg);
    f("angle_spread_deg", c.angle_spread_deg);
    f("delay_spread_ns", c.delay_spread_ns);
    f("path_decay_db", c.path_decay_db);
    f("gain_min_db", c.gain_min_db);
    f("gain_max_db", c.gain_max_db);
    f("seed", c.seed);
    f("train_fraction", c.train_fraction);
    f("val_fraction", c.val_fraction);
  }
};

struct Path {
  double elevation_rad = 0.0;
  double azimuth_rad = 0.0;
  double delay_s = 0.0;
  cplx gain{1.0, 0.0};
};

/// UPA response: Kronecker product of an N_v vertical and N_h horizontal
/// half-wavelength ULA response. Index = v * N_h + h.
std::vector<cplx> upa_steering(std::size_t n_v, std::size_t n_h, double elevation_rad, double azimuth_rad);

/// Baseband offset of the n-th sampled subcarrier (first subcarrier of RB n).
double subcarrier_frequency_hz(const ScenarioConfig& cfg, std::size_t n);

/// h_n = amplitude * sum_p gain_p * a(el_p, az_p) * exp(-j 2 pi f_n tau_p)
ChannelMatrix synthesize_channel(const ScenarioConfig& cfg, std::span<const Path> paths, double amplitude);

struct ChannelDraw {
  std::vector<Path> paths;
  double gain_db = 0.0;
};

/// Draws a non-empty path set and a large-scale gain.
ChannelDraw draw_channel(const ScenarioConfig& cfg, Rng& rng);

ChannelMatrix generate_sample(const ScenarioConfig& cfg, Rng& rng);
/// Sample `index` of the dataset seeded by cfg.seed (independent substream).
ChannelMatrix generate_sample(const ScenarioConfig& cfg, std::uint64_t index);

enum class Split { kTrain, kVal, kTest };

struct Dataset {
  std::size_t n_t = 0;
  std::size_t n_c = 0;
  std::vector<ChannelMatrix> samples;
  // Samples are ordered train, then val, then test.
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  /// JSON text stored in the optional trailing metadata block; empty if absent.
  std::string metadata;

  std::size_t size() const { return samples.size(); }
  std::size_t n_test() const { return samples.size() - n_train - n_val; }
  std::vector<std::size_t> indices(Split split) const;
  /// Held-out indices used for evaluation: the test split, or every sample
  /// when the dataset carries no split information.
  std::vector<std::size_t> eval_indices() const;
};

/// Generates `count` samples with values rounded to the 32-bit storage
/// precision, and split sizes from the config fractions.
Dataset generate_dataset(const ScenarioConfig& cfg, std::size_t count);

struct DatasetHeader {
  std::uint32_t version = 0;
  std::uint32_t count = 0;
  std::uint16_t n_t = 0;
  std::uint16_t n_c = 0;
};

inline constexpr std::size_t kDatasetHeaderBytes = 20;

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
DatasetHeader read_dataset_header(const std::filesystem::path& path);

/// JSON snapshot of a scenario config, and its inverse.
std::string scenario_to_json(const ScenarioConfig& cfg);
ScenarioConfig scenario_from_json(const std::string& text);

}  // namespace semcsi
