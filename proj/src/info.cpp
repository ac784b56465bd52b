#include "semcsi/info.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>

#include <boost/math/special_functions/digamma.hpp>

#include "semcsi/error.hpp"
#include "semcsi/rng.hpp"

namespace semcsi {

namespace {

double digamma(double x) { return boost::math::digamma(x); }

// FNV-1a over the raw bits: the jitter stream depends only on the data, so
// estimates stay symmetric in their arguments.
std::uint64_t fingerprint(const PointSet& x) {
  std::uint64_t h = 1469598103934665603ull;
  for (double v : x.values()) {
    h ^= std::bit_cast<std::uint64_t>(v);
    h *= 1099511628211ull;
  }
  return h;
}

bool has_duplicates(const PointSet& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](std::size_t a, std::size_t b) {
    auto pa = x.point(a), pb = x.point(b);
    return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
  };
  std::sort(order.begin(), order.end(), less);
  for (std::size_t i = 1; i < order.size(); ++i) {
    auto pa = x.point(order[i - 1]), pb = x.point(order[i]);
    if (std::equal(pa.begin(), pa.end(), pb.begin())) return true;
  }
  return false;
}

double max_norm(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double euclid_sq(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

void check_sizes(const PointSet& x, std::size_t k) {
  if (k < 1) throw ContractError("k-NN estimator: k must be >= 1");
  if (x.size() <= k)
    throw ContractError("k-NN estimator: need N > k, got N=" + std::to_string(x.size()) + ", k=" + std::to_string(k));
}

}  // namespace

PointSet::PointSet(std::size_t dim, std::vector<double> values) : dim_(dim), values_(std::move(values)) {
  if (dim_ == 0) throw DimensionError("point set dimension must be >= 1");
  if (values_.size() % dim_ != 0) throw DimensionError("point set data length is not a multiple of its dimension");
}

std::string to_string(InfoEstimate::Quantity q) {
  return q == InfoEstimate::Quantity::kEntropy ? "entropy" : "mutual_information";
}

PointSet jitter_duplicates(const PointSet& x, const KnnOptions& opt, bool* applied) {
  if (applied) *applied = false;
  if (!has_duplicates(x)) return x;
  const std::size_t d = x.dim();
  std::vector<double> spread(d, 0.0);
  double overall = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    double lo = x.point(0)[a], hi = lo;
    for (std::size_t i = 1; i < x.size(); ++i) lo = std::min(lo, x.point(i)[a]), hi = std::max(hi, x.point(i)[a]);
    spread[a] = hi - lo;
    overall = std::max(overall, spread[a]);
  }
  if (!(overall > 0.0))
    throw ContractError("k-NN estimator: all points are identical; the estimate is undefined. Provide "
                        "continuous data or raise the jitter scale (currently " +
                        std::to_string(opt.jitter) + " relative to the data spread)");
  Rng rng = Rng::substream(opt.jitter_seed, fingerprint(x));
  PointSet out = x;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double s = spread[a] > 0.0 ? spread[a] : overall;
      out.values()[i * d + a] += opt.jitter * s * rng.normal();
    }
  if (applied) *applied = true;
  return out;
}

InfoEstimate knn_entropy(const PointSet& input, const KnnOptions& opt) {
  check_sizes(input, opt.k);
  bool jittered = false;
  const PointSet x = jitter_duplicates(input, opt, &jittered);
  const std::size_t n = x.size(), d = x.dim(), k = opt.k;

  std::vector<double> dist(n);
  double log_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dist[m++] = euclid_sq(x.point(i), x.point(j));
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.begin() + static_cast<std::ptrdiff_t>(m));
    const double r2 = dist[k - 1];
    if (!(r2 > 0.0)) throw ContractError("k-NN entropy: zero neighbour distance; raise the jitter scale");
    log_sum += 0.5 * std::log(r2);
  }
  const double dd = static_cast<double>(d);
  const double log_vd = 0.5 * dd * std::log(std::numbers::pi) - std::lgamma(0.5 * dd + 1.0);
  InfoEstimate e;
  e.quantity = InfoEstimate::Quantity::kEntropy;
  e.nats = digamma(static_cast<double>(n)) - digamma(static_cast<double>(k)) + log_vd +
           dd * log_sum / static_cast<double>(n);
  e.bits = e.nats / std::numbers::ln2;
  e.k = k;
  e.n = n;
  e.jittered = jittered;
  return e;
}

InfoEstimate knn_mutual_information(const PointSet& x_in, const PointSet& y_in, const KnnOptions& opt) {
  if (x_in.size() != y_in.size())
    throw ContractError("k-NN mutual information: X and Y must be paired (" + std::to_string(x_in.size()) + " vs " +
                        std::to_string(y_in.size()) + " samples)");
  check_sizes(x_in, opt.k);
  bool jx = false, jy = false;
  const PointSet x = jitter_duplicates(x_in, opt, &jx);
  const PointSet y = jitter_duplicates(y_in, opt, &jy);
  const std::size_t n = x.size(), k = opt.k;

  std::vector<double> dx(n), dy(n), joint(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dx[m] = max_norm(x.point(i), x.point(j));
      dy[m] = max_norm(y.point(i), y.point(j));
      joint[m] = std::max(dx[m], dy[m]);
      ++m;
    }
    std::vector<double> sorted(joint.begin(), joint.begin() + static_cast<std::ptrdiff_t>(m));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
    const double eps = sorted[k - 1];
    std::size_t nx = 0, ny = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (dx[j] < eps) ++nx;
      if (dy[j] < eps) ++ny;
    }
    acc += digamma(static_cast<double>(nx + 1)) + digamma(static_cast<double>(ny + 1));
  }
  InfoEstimate e;
  e.quantity = InfoEstimate::Quantity::kMutualInformation;
  e.nats = digamma(static_cast<double>(k)) + digamma(static_cast<double>(n)) - acc / static_cast<double>(n);
  e.bits = e.nats / std::numbers::ln2;
  e.k = k;
  e.n = n;
  e.jittered = jx || jy;
  return e;
}

}  // namespace semcsi
