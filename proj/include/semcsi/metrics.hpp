#pragma once

// Reconstruction metrics and feature export for external embedding tools.

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "semcsi/channel.hpp"
#include "semcsi/cqi.hpp"

namespace semcsi {

struct MetricResult {
  double nmse_linear = 0.0;
  double nmse_db = 0.0;  // -inf when nmse_linear == 0
  double sgcs = 0.0;
  std::size_t samples = 0;
  std::size_t excluded_samples = 0;  // zero-norm H
  std::size_t excluded_columns = 0;  // zero h_n or zero estimate column
};

/// ||H - Ĥ||_F^2 / ||H||_F^2 for one sample. Throws ContractError on zero H.
double nmse_ratio(const ChannelMatrix& h, const ChannelMatrix& h_hat);

/// Per-subcarrier squared cosine similarity averaged over the usable
/// columns. `excluded` receives the number of skipped zero columns.
double sgcs_sample(const ChannelMatrix& h, const ChannelMatrix& h_hat, std::size_t* excluded = nullptr);

double to_db(double linear);

/// Running dataset averages of NMSE and SGCS.
class MetricAccumulator {
 public:
  void add(const ChannelMatrix& h, const ChannelMatrix& h_hat);
  MetricResult result() const;

 private:
  double nmse_sum_ = 0.0;
  double sgcs_sum_ = 0.0;
  std::size_t nmse_count_ = 0;
  std::size_t sgcs_count_ = 0;
  std::size_t excluded_samples_ = 0;
  std::size_t excluded_columns_ = 0;
};

MetricResult evaluate_metrics(std::span<const ChannelMatrix> h, std::span<const ChannelMatrix> h_hat);

/// H' = H / ||H||_F flattened as (re, im) pairs, antenna-major, subcarrier-minor.
std::vector<double> normalized_features(const ChannelMatrix& h);

/// CSV: one row per sample with 2 N_t N_c normalized features and the
/// wideband CQI label in column "cqi".
void export_embeddings(std::span<const ChannelMatrix> samples, std::span<const int> wideband_labels,
                       const std::filesystem::path& path);

}  // namespace semcsi
