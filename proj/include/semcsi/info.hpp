#pragma once

// Nonparametric k-nearest-neighbour entropy (Kozachenko-Leonenko) and
// mutual information (Kraskov-Stoegbauer-Grassberger, first estimator).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace semcsi {

/// N points of dimension `dim`, row-major.
class PointSet {
 public:
  PointSet() = default;
  PointSet(std::size_t dim, std::vector<double> values);
  /// One-dimensional convenience constructor.
  static PointSet scalar(std::vector<double> values) { return PointSet(1, std::move(values)); }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ ? values_.size() / dim_ : 0; }
  std::span<const double> point(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

 private:
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

struct KnnOptions {
  std::size_t k = 3;
  /// Duplicate points get Gaussian jitter of this scale times the per-axis spread.
  double jitter = 1e-10;
  std::uint64_t jitter_seed = 0;
};

struct InfoEstimate {
  enum class Quantity { kEntropy, kMutualInformation };
  Quantity quantity = Quantity::kEntropy;
  double nats = 0.0;
  double bits = 0.0;
  std::size_t k = 0;
  std::size_t n = 0;
  bool jittered = false;
};

std::string to_string(InfoEstimate::Quantity q);

/// H = psi(N) - psi(k) + log V_d + (d/N) sum_i log r_i, with r_i the
/// Euclidean distance from point i to its k-th neighbour and V_d the volume
/// of the unit d-ball.
InfoEstimate knn_entropy(const PointSet& x, const KnnOptions& opt = {});

/// I = psi(k) + psi(N) - <psi(n_x + 1) + psi(n_y + 1)> with max-norm
/// neighbourhoods in the joint space.
InfoEstimate knn_mutual_information(const PointSet& x, const PointSet& y, const KnnOptions& opt = {});

/// Returns the set with jitter applied if it contains duplicate points, and
/// reports whether it did. Throws ContractError if every point is identical.
PointSet jitter_duplicates(const PointSet& x, const KnnOptions& opt, bool* applied = nullptr);

}  // namespace semcsi
