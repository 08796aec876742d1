#pragma once

#include "hoif/functionals.hpp"

#include <random>

namespace hoif::harness {

//! random finite law on G equally spaced points of [0,1] (one per dyadic cell when G = 2^L);
//! (Y, A) binary or ternary so every enumeration is exact
inline DiscreteDGP random_discrete_law(const std::string& functional, long G, std::uint64_t seed, double pi0 = 0.5) {
  if (G < 1 || G > 64) throw config_error("discrete laws hold 1..64 support points");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  DiscreteDGP law;
  law.x.resize(G, 1);
  law.mass.resize(G);
  for (long g = 0; g < G; ++g) {
    law.x(g, 0) = (double(g) + 0.5) / double(G);
    law.mass(g) = 0.5 + U(rng);
  }
  law.mass /= law.mass.sum();
  for (long g = 0; g < G; ++g) {
    std::vector<Outcome> c;
    double y0 = 2.0 * U(rng) - 1.0, y1 = 2.0 * U(rng) - 1.0;
    if (functional == "2a" || functional == "2b") {
      double pi = 0.3 + 0.6 * U(rng), s = U(rng);
      c = {{y0, 1.0, pi * s}, {y1, 1.0, pi * (1.0 - s)}, {0.0, 0.0, 1.0 - pi}};
    } else if (functional == "4") {
      double s1 = U(rng), s0 = U(rng);
      c = {{y0, 1.0, pi0 * s1}, {y1, 1.0, pi0 * (1.0 - s1)}, {y0, 0.0, (1.0 - pi0) * s0},
           {y1 - 0.5, 0.0, (1.0 - pi0) * (1.0 - s0)}};
    } else {
      double w[4], t = 0.0;
      for (double& v : w) t += (v = 0.2 + U(rng));
      c = {{y0, 0.0, w[0] / t}, {y1, 0.0, w[1] / t}, {y0, 1.0, w[2] / t}, {y1, 1.0, w[3] / t}};
    }
    law.cond.push_back(c);
  }
  law.validate();
  return law;
}

//! n i.i.d. rows from a finite law
inline Frame sample_discrete(const DiscreteDGP& law, long n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> cum(std::size_t(law.points()));
  double acc = 0.0;
  for (long g = 0; g < law.points(); ++g) cum[std::size_t(g)] = (acc += law.mass(g));
  Frame f;
  f.y.resize(n);
  f.a.resize(n);
  f.x.resize(n, law.x.cols());
  for (long i = 0; i < n; ++i) {
    double u = U(rng) * acc;
    auto g = long(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    g = std::min(g, law.points() - 1);
    const auto& c = law.cond[std::size_t(g)];
    double v = U(rng), t = 0.0;
    std::size_t o = 0;
    while (o + 1 < c.size() && v > (t += c[o].prob)) ++o;
    f.y(i) = c[o].y;
    f.a(i) = c[o].a;
    f.x.row(i) = law.x.row(g);
  }
  return f;
}

}  // namespace hoif::harness
