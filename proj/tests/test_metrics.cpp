#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "semcsi/error.hpp"
#include "semcsi/metrics.hpp"
#include "oracles.hpp"

using namespace semcsi;

TEST_CASE("NMSE reference values") {
  Rng rng(1);
  const auto h = oracles::random_channel(rng, 4, 8);
  CHECK(nmse_ratio(h, h) == 0.0);
  CHECK(std::isinf(to_db(0.0)));
  CHECK(nmse_ratio(h, ChannelMatrix(4, 8)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(nmse_ratio(h, h.scaled(1.1)) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(to_db(0.01) == doctest::Approx(-20.0).epsilon(1e-12));
  CHECK_THROWS_AS(nmse_ratio(ChannelMatrix(4, 8), h), ContractError);
  CHECK_THROWS_AS(nmse_ratio(h, ChannelMatrix(8, 4)), DimensionError);
}

TEST_CASE("SGCS reference values") {
  Rng rng(2);
  const auto h = oracles::random_channel(rng, 4, 8);
  ChannelMatrix rotated = h;
  for (auto& z : rotated.data()) z *= std::polar(3.7, 1.234);
  CHECK(sgcs_sample(h, rotated) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(sgcs_sample(h, h) == doctest::Approx(1.0).epsilon(1e-14));

  // orthogonal columns
  ChannelMatrix a(2, 3), b(2, 3);
  for (std::size_t n = 0; n < 3; ++n) {
    a(0, n) = 1.0;
    b(1, n) = cplx(0.0, 2.0);
  }
  CHECK(sgcs_sample(a, b) == 0.0);

  std::size_t excluded = 0;
  ChannelMatrix c = a;
  c(0, 1) = 0.0;
  CHECK(sgcs_sample(a, c, &excluded) == doctest::Approx(1.0));
  CHECK(excluded == 1);
}

TEST_CASE("metrics against brute-force oracles on random pairs") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto h = oracles::random_channel(rng, 4, 8);
    const auto g = oracles::random_channel(rng, 4, 8);
    CHECK(std::abs(nmse_ratio(h, g) - oracles::nmse(h, g)) < 1e-12);
    CHECK(std::abs(sgcs_sample(h, g) - oracles::sgcs(h, g)) < 1e-12);
  }
}

TEST_CASE("per-column complex scaling leaves SGCS unchanged") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto h = oracles::random_channel(rng, 4, 8);
    const auto g = oracles::random_channel(rng, 4, 8);
    ChannelMatrix g2 = g;
    for (std::size_t n = 0; n < 8; ++n) {
      const cplx c = std::polar(rng.uniform(0.1, 10.0), rng.uniform(-3.0, 3.0));
      for (std::size_t i = 0; i < 4; ++i) g2(i, n) *= c;
    }
    CHECK(sgcs_sample(h, g2) == doctest::Approx(sgcs_sample(h, g)).epsilon(1e-12));
    const double c = rng.uniform(-5.0, 5.0);
    CHECK(nmse_ratio(h.scaled(c), g.scaled(c)) == doctest::Approx(nmse_ratio(h, g)).epsilon(1e-12));
  }
}

TEST_CASE("accumulator averages and excludes zero-norm samples") {
  Rng rng(5);
  const auto h = oracles::random_channel(rng, 2, 4);
  std::vector<ChannelMatrix> truth{h, h, ChannelMatrix(2, 4)};
  std::vector<ChannelMatrix> est{h, ChannelMatrix(2, 4), h};
  const auto r = evaluate_metrics(truth, est);
  CHECK(r.nmse_linear == doctest::Approx(0.5));
  CHECK(r.excluded_samples == 1);
  CHECK(r.samples == 2);
}

TEST_CASE("embedding export") {
  Rng rng(6);
  std::vector<ChannelMatrix> samples;
  std::vector<int> labels;
  for (int i = 0; i < 7; ++i) {
    samples.push_back(oracles::random_channel(rng, 2, 3));
    labels.push_back(i);
  }
  const auto path = std::filesystem::temp_directory_path() / "semcsi_embed.csv";
  export_embeddings(samples, labels, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  std::size_t commas = std::count(header.begin(), header.end(), ',');
  CHECK(commas == 2 * 2 * 3);
  CHECK(header.substr(header.size() - 3) == "cqi");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    const auto f = normalized_features(samples[rows]);
    for (std::size_t c = 0; c < f.size(); ++c) {
      std::getline(ss, cell, ',');
      CHECK(std::abs(std::stod(cell) - f[c]) <= 1e-8 * std::max(1.0, std::abs(f[c])));
    }
    std::getline(ss, cell, ',');
    CHECK(std::stoi(cell) == labels[rows]);
    ++rows;
  }
  CHECK(rows == samples.size());
}
