#include "semcsi/cqi.hpp"

#include <cmath>
#include <numeric>

#include "semcsi/error.hpp"

namespace semcsi {

double LinkBudget::snr_scale() const { return std::pow(10.0, (tx_power_dbm - noise_power_dbm) / 10.0); }

CqiTable::CqiTable() {
  for (std::size_t i = 0; i < thresholds_.size(); ++i) thresholds_[i] = -6.0 + 2.0 * static_cast<double>(i);
}

CqiTable::CqiTable(const Thresholds& thresholds_db) : thresholds_(thresholds_db) {
  for (std::size_t i = 0; i < thresholds_.size(); ++i) {
    if (!std::isfinite(thresholds_[i])) throw ConfigError("cqi.thresholds_db: non-finite threshold");
    if (i > 0 && !(thresholds_[i] > thresholds_[i - 1]))
      throw ConfigError("cqi.thresholds_db: thresholds must be strictly increasing");
  }
}

CqiTable CqiTable::from_vector(const std::vector<double>& thresholds_db) {
  if (thresholds_db.size() != kCqiLevels - 1)
    throw ConfigError("cqi.thresholds_db: expected 15 thresholds, got " + std::to_string(thresholds_db.size()));
  Thresholds t{};
  std::copy(thresholds_db.begin(), thresholds_db.end(), t.begin());
  return CqiTable(t);
}

int CqiTable::index_for_db(double snr_db) const {
  int k = 0;
  for (double t : thresholds_)
    if (snr_db >= t) ++k;
  return k;
}

int CqiTable::index_for_linear(double snr) const {
  if (!(snr > 0.0)) return 0;
  return index_for_db(10.0 * std::log10(snr));
}

std::string to_string(CqiMode mode) {
  switch (mode) {
    case CqiMode::kNone: return "none";
    case CqiMode::kWideband: return "wideband";
    case CqiMode::kSubband: return "subband";
  }
  return "none";
}

CqiMode cqi_mode_from_string(const std::string& s) {
  if (s == "none" || s == "wo_CQI") return CqiMode::kNone;
  if (s == "wideband" || s == "wide_CQI") return CqiMode::kWideband;
  if (s == "subband" || s == "sub_CQI") return CqiMode::kSubband;
  throw ConfigError("unknown cqi mode '" + s + "' (expected none, wideband or subband)");
}

std::vector<double> subcarrier_snr(const ChannelMatrix& h, const LinkBudget& lb) {
  const double scale = lb.snr_scale();
  std::vector<double> rho(h.n_c(), 0.0);
  for (std::size_t n = 0; n < h.n_c(); ++n) {
    double e = 0.0;
    for (std::size_t i = 0; i < h.n_t(); ++i) e += std::norm(h(i, n));
    rho[n] = scale * e;
  }
  return rho;
}

int wideband_cqi(std::span<const double> rho, const CqiTable& table) {
  if (rho.empty()) throw ContractError("wideband_cqi: empty SNR vector");
  const double mean = std::accumulate(rho.begin(), rho.end(), 0.0) / static_cast<double>(rho.size());
  return table.index_for_linear(mean);
}

std::vector<int> subband_cqi(std::span<const double> rho, const CqiTable& table, std::size_t per_subband) {
  if (per_subband == 0 || rho.size() % per_subband != 0)
    throw ConfigError("cqi.subcarriers_per_subband (" + std::to_string(per_subband) +
                      ") must divide the subcarrier count (" + std::to_string(rho.size()) + ")");
  std::vector<int> k;
  for (std::size_t b = 0; b < rho.size(); b += per_subband) k.push_back(wideband_cqi(rho.subspan(b, per_subband), table));
  return k;
}

CqiReport compute_cqi(const ChannelMatrix& h, const CqiConfig& cfg, CqiMode mode) {
  CqiReport r;
  r.mode = mode;
  if (mode == CqiMode::kNone) return r;
  const auto rho = subcarrier_snr(h, cfg.link);
  if (mode == CqiMode::kWideband)
    r.indices = {wideband_cqi(rho, cfg.table)};
  else
    r.indices = subband_cqi(rho, cfg.table, cfg.subcarriers_per_subband);
  return r;
}

}  // namespace semcsi
