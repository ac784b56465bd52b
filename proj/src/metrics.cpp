#include "semcsi/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "semcsi/error.hpp"

namespace semcsi {

namespace {

void check_dims(const ChannelMatrix& a, const ChannelMatrix& b) {
  if (a.n_t() != b.n_t() || a.n_c() != b.n_c())
    throw DimensionError("metric inputs differ in shape: " + std::to_string(a.n_t()) + "x" + std::to_string(a.n_c()) +
                         " vs " + std::to_string(b.n_t()) + "x" + std::to_string(b.n_c()));
}

}  // namespace

double to_db(double linear) {
  if (linear <= 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(linear);
}

double nmse_ratio(const ChannelMatrix& h, const ChannelMatrix& h_hat) {
  check_dims(h, h_hat);
  const double den = h.frobenius_sq();
  if (!(den > 0.0)) throw ContractError("nmse: zero-norm channel sample");
  double num = 0.0;
  for (std::size_t i = 0; i < h.data().size(); ++i) num += std::norm(h.data()[i] - h_hat.data()[i]);
  return num / den;
}

double sgcs_sample(const ChannelMatrix& h, const ChannelMatrix& h_hat, std::size_t* excluded) {
  check_dims(h, h_hat);
  double acc = 0.0;
  std::size_t used = 0, skipped = 0;
  for (std::size_t n = 0; n < h.n_c(); ++n) {
    cplx inner{};
    double e = 0.0, e_hat = 0.0;
    for (std::size_t i = 0; i < h.n_t(); ++i) {
      inner += std::conj(h_hat(i, n)) * h(i, n);
      e += std::norm(h(i, n));
      e_hat += std::norm(h_hat(i, n));
    }
    if (!(e > 0.0) || !(e_hat > 0.0)) {
      ++skipped;
      continue;
    }
    // |<a,b>|^2 <= |a|^2 |b|^2; clamp the rounding excess
    acc += std::min(1.0, std::norm(inner) / (e * e_hat));
    ++used;
  }
  if (excluded) *excluded = skipped;
  return used ? acc / static_cast<double>(used) : 0.0;
}

void MetricAccumulator::add(const ChannelMatrix& h, const ChannelMatrix& h_hat) {
  check_dims(h, h_hat);
  if (h.frobenius_sq() > 0.0) {
    nmse_sum_ += nmse_ratio(h, h_hat);
    ++nmse_count_;
  } else {
    ++excluded_samples_;
  }
  std::size_t skipped = 0;
  const double s = sgcs_sample(h, h_hat, &skipped);
  excluded_columns_ += skipped;
  if (skipped < h.n_c()) {
    sgcs_sum_ += s;
    ++sgcs_count_;
  }
}

MetricResult MetricAccumulator::result() const {
  MetricResult r;
  r.samples = nmse_count_;
  r.nmse_linear = nmse_count_ ? nmse_sum_ / static_cast<double>(nmse_count_) : 0.0;
  r.nmse_db = to_db(r.nmse_linear);
  r.sgcs = sgcs_count_ ? sgcs_sum_ / static_cast<double>(sgcs_count_) : 0.0;
  r.excluded_samples = excluded_samples_;
  r.excluded_columns = excluded_columns_;
  return r;
}

MetricResult evaluate_metrics(std::span<const ChannelMatrix> h, std::span<const ChannelMatrix> h_hat) {
  if (h.size() != h_hat.size()) throw DimensionError("metric inputs differ in sample count");
  MetricAccumulator acc;
  for (std::size_t i = 0; i < h.size(); ++i) acc.add(h[i], h_hat[i]);
  return acc.result();
}

std::vector<double> normalized_features(const ChannelMatrix& h) {
  const double norm = std::sqrt(h.frobenius_sq());
  if (!(norm > 0.0)) throw ContractError("normalized_features: zero-norm channel sample");
  std::vector<double> f;
  f.reserve(2 * h.data().size());
  for (const auto& z : h.data()) {
    f.push_back(z.real() / norm);
    f.push_back(z.imag() / norm);
  }
  return f;
}

void export_embeddings(std::span<const ChannelMatrix> samples, std::span<const int> wideband_labels,
                       const std::filesystem::path& path) {
  if (samples.size() != wideband_labels.size()) throw DimensionError("export: label count differs from sample count");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  if (!samples.empty()) {
    const auto& first = samples.front();
    for (std::size_t i = 0; i < first.n_t(); ++i)
      for (std::size_t n = 0; n < first.n_c(); ++n) out << "h" << i << '_' << n << "_re,h" << i << '_' << n << "_im,";
  }
  out << "cqi\n";
  char buf[32];
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s].n_t() != samples.front().n_t() || samples[s].n_c() != samples.front().n_c())
      throw DimensionError("export: samples differ in shape");
    for (double v : normalized_features(samples[s])) {
      std::snprintf(buf, sizeof buf, "%.9g,", v);
      out << buf;
    }
    out << wideband_labels[s] << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace semcsi
