#pragma once

// Per-subcarrier SNR and wideband/subband CQI indices.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "semcsi/channel.hpp"

namespace semcsi {

inline constexpr int kCqiLevels = 16;

struct LinkBudget {
  double tx_power_dbm = 30.0;
  double noise_power_dbm = -95.0;

  /// Linear P_tx / sigma^2.
  double snr_scale() const;
};

/// 15 strictly increasing SNR thresholds (dB). Index i (1..15) is reported
/// once the SNR reaches threshold i; index 0 below the first threshold.
class CqiTable {
 public:
  using Thresholds = std::array<double, kCqiLevels - 1>;

  /// Thresholds from -6 dB to +22 dB in 2 dB steps.
  CqiTable();
  explicit CqiTable(const Thresholds& thresholds_db);
  /// Throws ConfigError unless exactly 15 strictly increasing finite values.
  static CqiTable from_vector(const std::vector<double>& thresholds_db);

  int index_for_db(double snr_db) const;
  int index_for_linear(double snr) const;
  const Thresholds& thresholds_db() const { return thresholds_; }

 private:
  Thresholds thresholds_;
};

enum class CqiMode { kNone, kWideband, kSubband };

std::string to_string(CqiMode mode);
CqiMode cqi_mode_from_string(const std::string& s);

struct CqiReport {
  CqiMode mode = CqiMode::kNone;
  /// One index (wideband), N_b indices (subband) or none.
  std::vector<int> indices;
};

struct CqiConfig {
  LinkBudget link;
  CqiTable table;
  std::size_t subcarriers_per_subband = 4;
};

/// rho_n = (P_tx / sigma^2) * ||h_n||^2 (MRT beamforming gain), linear.
std::vector<double> subcarrier_snr(const ChannelMatrix& h, const LinkBudget& lb);

/// Linear mean of rho mapped through the table.
int wideband_cqi(std::span<const double> rho, const CqiTable& table);

/// Contiguous blocks of `per_subband` subcarriers, each averaged linearly.
std::vector<int> subband_cqi(std::span<const double> rho, const CqiTable& table, std::size_t per_subband);

CqiReport compute_cqi(const ChannelMatrix& h, const CqiConfig& cfg, CqiMode mode);

}  // namespace semcsi
