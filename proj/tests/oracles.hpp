#pragma once

// Brute-force reference implementations used only by tests.

#include <cmath>

#include "semcsi/channel.hpp"
#include "semcsi/rng.hpp"

namespace oracles {

inline semcsi::ChannelMatrix random_channel(semcsi::Rng& rng, std::size_t n_t, std::size_t n_c) {
  semcsi::ChannelMatrix h(n_t, n_c);
  for (std::size_t i = 0; i < n_t; ++i)
    for (std::size_t n = 0; n < n_c; ++n) h(i, n) = semcsi::cplx(rng.normal(), rng.normal());
  return h;
}

// Sum of squared real/imag component differences over squared components.
inline double nmse(const semcsi::ChannelMatrix& h, const semcsi::ChannelMatrix& g) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < h.n_t(); ++i)
    for (std::size_t n = 0; n < h.n_c(); ++n) {
      const double dr = h(i, n).real() - g(i, n).real();
      const double di = h(i, n).imag() - g(i, n).imag();
      num += dr * dr + di * di;
      den += h(i, n).real() * h(i, n).real() + h(i, n).imag() * h(i, n).imag();
    }
  return num / den;
}

// Per-column cosine in explicit real arithmetic: g^H h = sum (gr - j gi)(hr + j hi).
inline double sgcs(const semcsi::ChannelMatrix& h, const semcsi::ChannelMatrix& g) {
  double total = 0.0;
  for (std::size_t n = 0; n < h.n_c(); ++n) {
    double re = 0.0, im = 0.0, nh = 0.0, ng = 0.0;
    for (std::size_t i = 0; i < h.n_t(); ++i) {
      const double hr = h(i, n).real(), hi = h(i, n).imag();
      const double gr = g(i, n).real(), gi = g(i, n).imag();
      re += gr * hr + gi * hi;
      im += gr * hi - gi * hr;
      nh += hr * hr + hi * hi;
      ng += gr * gr + gi * gi;
    }
    const double c = std::sqrt(re * re + im * im) / (std::sqrt(nh) * std::sqrt(ng));
    total += c * c;
  }
  return total / static_cast<double>(h.n_c());
}

}  // namespace oracles
