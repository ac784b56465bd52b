#include <doctest.h>

#include <cmath>
#include <numbers>

#include "semcsi/error.hpp"
#include "semcsi/info.hpp"
#include "semcsi/rng.hpp"

using namespace semcsi;

namespace {

// Analytic references.
const double kGaussEntropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);  // 1.4189 nats
const double kGaussMi09 = -0.5 * std::log(1.0 - 0.81);                                 // 0.8304 nats

PointSet gaussian(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return PointSet::scalar(std::move(v));
}

}  // namespace

TEST_CASE("analytic constants") {
  CHECK(kGaussEntropy == doctest::Approx(1.4189).epsilon(1e-4));
  CHECK(kGaussMi09 == doctest::Approx(0.8304).epsilon(1e-4));
}

TEST_CASE("entropy of a standard Gaussian and its scaling law") {
  Rng rng(11);
  const auto x = gaussian(rng, 10000);
  const auto e = knn_entropy(x);
  CHECK(std::abs(e.nats - kGaussEntropy) < 0.1);
  CHECK(e.bits == doctest::Approx(e.nats / std::numbers::ln2));
  CHECK(e.k == 3);
  CHECK(e.n == 10000);

  // scaling by a shifts the estimate by ln(a); translation is exact
  PointSet scaled = x, shifted = x;
  for (auto& v : scaled.values()) v *= 3.0;
  for (auto& v : shifted.values()) v += 12.5;
  CHECK(std::abs(knn_entropy(scaled).nats - e.nats - std::log(3.0)) < 0.05);
  CHECK(std::abs(knn_entropy(shifted).nats - e.nats) < 1e-9);
}

TEST_CASE("entropy of the unit uniform") {
  Rng rng(12);
  std::vector<double> v(10000);
  for (auto& x : v) x = rng.uniform();
  CHECK(std::abs(knn_entropy(PointSet::scalar(v)).nats) < 0.1);
}

TEST_CASE("mutual information oracles") {
  Rng rng(13);
  const std::size_t n = 10000;
  const auto x = gaussian(rng, n);
  const auto y_ind = gaussian(rng, n);
  CHECK(std::abs(knn_mutual_information(x, y_ind).nats) < 0.05);

  std::vector<double> yc(n);
  for (std::size_t i = 0; i < n; ++i) yc[i] = 0.9 * x.values()[i] + std::sqrt(1 - 0.81) * rng.normal();
  const auto mi = knn_mutual_information(x, PointSet::scalar(yc));
  CHECK(std::abs(mi.nats - kGaussMi09) < 0.1);

  // Y = X: diverges with N
  CHECK(knn_mutual_information(x, x).nats > 2.0);
}

TEST_CASE("mutual information is symmetric") {
  Rng rng(14);
  const auto x = gaussian(rng, 500);
  std::vector<double> ydata(500 * 2);
  for (std::size_t i = 0; i < 500; ++i) {
    ydata[2 * i] = x.values()[i] + rng.normal();
    ydata[2 * i + 1] = std::round(2.0 * rng.normal());  // discrete axis with ties
  }
  const PointSet y(2, ydata);
  CHECK(knn_mutual_information(x, y).nats == knn_mutual_information(y, x).nats);
}

TEST_CASE("duplicates are jittered, identical data is rejected") {
  std::vector<double> v;
  for (int i = 0; i < 200; ++i) v.push_back(i % 4);
  bool applied = false;
  const auto j = jitter_duplicates(PointSet::scalar(v), KnnOptions{}, &applied);
  CHECK(applied);
  CHECK(knn_entropy(PointSet::scalar(v)).jittered);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(j.values()[i] - v[i]) < 1e-8);

  CHECK_THROWS_AS(knn_entropy(PointSet::scalar(std::vector<double>(50, 1.0))), ContractError);
  CHECK_THROWS_AS(knn_entropy(PointSet::scalar({1.0, 2.0, 3.0})), ContractError);
  CHECK_THROWS_AS(knn_mutual_information(PointSet::scalar({1, 2, 3, 4}), PointSet::scalar({1, 2, 3})),
                  ContractError);
}
