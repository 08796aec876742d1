#pragma once

#include "hoif/harness/dgp.hpp"

namespace hoif::harness {

//! c0 + sum_{l < levels} sum_u s(l,u) amp 2^{-l(beta+1/2)} psi_{l,u}, signs from a counter hash
struct HaarFunction {
  double c0 = 0.0, amp = 0.0, beta = 0.5;
  int levels = 40;
  std::uint64_t seed = 0;

  double sign(int l, std::uint64_t u) const {
    return (mix64(derive_seed(seed, std::uint64_t(l), u)) >> 63) ? 1.0 : -1.0;
  }
  double coef(int l) const { return amp * std::pow(2.0, -l * (beta + 0.5)); }

  //! value using only levels < upto
  double eval(double x, int upto) const {
    double v = c0;
    int top = std::min(levels, upto);
    for (int l = 0; l < top; ++l) {
      double s = std::ldexp(x, l);
      auto u = std::uint64_t(std::min(std::floor(s), std::ldexp(1.0, l) - 1.0));
      double half = (s - double(u)) < 0.5 ? 1.0 : -1.0;
      v += sign(l, u) * coef(l) * std::pow(2.0, 0.5 * l) * half;
    }
    return v;
  }
  double operator()(double x) const { return eval(x, levels); }

  //! sum over levels >= L of squared coefficients (the L2 energy above level L)
  double tail_energy(int L) const {
    double s = 0.0;
    for (int l = std::max(0, L); l < levels; ++l) s += amp * amp * std::pow(2.0, -2.0 * l * beta);
    return s;
  }
  //! sup of |f - c0|
  double sup_dev() const {
    double s = 0.0;
    for (int l = 0; l < levels; ++l) s += amp * std::pow(2.0, -l * beta);
    return s;
  }
};

//! amplitude giving sup |f - c0| = radius
inline double amplitude_for(double beta, int levels, double radius) {
  HaarFunction f{0.0, 1.0, beta, levels, 0};
  return radius / f.sup_dev();
}

//! fitted log-log slope of the squared projection residual on dyadic levels, by cell
//! averaging of the function on a 2^F midpoint grid
inline double projection_decay_slope(const HaarFunction& f, int L0, int L1, int F = 16) {
  std::size_t nf = std::size_t(1) << F;
  std::vector<double> v(nf);
  for (std::size_t c = 0; c < nf; ++c) v[c] = f((double(c) + 0.5) / double(nf));
  std::vector<double> lk, lr;
  for (int L = L0; L <= L1; ++L) {
    std::size_t w = std::size_t(1) << (F - L);
    double r = 0.0;
    for (std::size_t c = 0; c < nf; c += w) {
      double m = 0.0;
      for (std::size_t t = 0; t < w; ++t) m += v[c + t];
      m /= double(w);
      for (std::size_t t = 0; t < w; ++t) r += (v[c + t] - m) * (v[c + t] - m);
    }
    lk.push_back(L * std::log(2.0));
    lr.push_back(std::log(r / double(nf)));
  }
  return ls_slope(lk, lr);
}

// ------------------------------------------------------------------ spec

enum class DgpKind { span, holder, discrete };

inline DgpKind parse_kind(const std::string& s) {
  if (s == "span") return DgpKind::span;
  if (s == "holder") return DgpKind::holder;
  if (s == "discrete") return DgpKind::discrete;
  throw config_error("unknown dgp kind '" + s + "'");
}

struct DgpSpec {
  std::string kind = "holder";
  std::string functional = "1a";
  int d = 1;
  double beta_b = 0.5, beta_p = 0.5, beta_g = 0.5;
  int levels = 40;          // wavelet levels of b and p (holder kind)
  int span_level = 3;       // span kind: b = p constant on 2^span_level cells
  int density_level = 0;    // X density constant on 2^density_level cells; 0 = uniform
  double density_radius = 0.5;
  double radius = 0.35;     // sup |b - 1/2|
  double noise = 0.5;       // outcome noise sd for continuous outcomes
  bool binary = false;      // 1a / 1a-sq: Bernoulli outcomes (needs radius <= 1/2)
  double floor = 0.1;       // propensity floor
  double tau = 0.5;         // root of functional 1c
  long support = 16;        // discrete kind
  std::uint64_t seed = 1;
};

//! ground truth for a generated law
struct Truth {
  double psi = 0.0;
  XFn b, p, g;
  double decay_slope_b = std::nan("");
};

//! a sampled law: b, p and the X density (piecewise constant) with exact moments
struct Law {
  DgpSpec spec;
  HaarFunction bf, pf;
  std::vector<double> dens;  // density on 2^density_level cells
  std::vector<double> cum;
  DiscreteDGP discrete;
  Truth truth;

  double density(double x) const {
    if (dens.size() == 1) return 1.0;
    return dens[std::size_t(haar_cell(x, spec.density_level))];
  }
  //! integral of h(coarse part) f over the density cells, plus a within-cell energy term
  template <class F>
  double cell_integral(F&& coarse) const {
    double s = 0.0, w = 1.0 / double(dens.size());
    for (std::size_t c = 0; c < dens.size(); ++c) s += dens[c] * w * coarse((double(c) + 0.5) * w);
    return s;
  }
};

namespace detail {

inline HaarFunction density_function(const DgpSpec& s) {
  HaarFunction f{1.0, 0.0, s.beta_g, s.density_level, derive_seed(s.seed, 0xde5)};
  f.amp = amplitude_for(s.beta_g, std::max(1, s.density_level), s.density_radius);
  return f;
}

}  // namespace detail

inline Law make_law(const DgpSpec& s) {
  if (s.d != 1 && parse_kind(s.kind) != DgpKind::discrete) throw config_error("span and holder laws are built for d = 1");
  static const std::vector<std::string> ok{"1a", "1a-sq", "1b", "1c", "2a"};
  if (std::find(ok.begin(), ok.end(), s.functional) == ok.end())
    throw config_error("unsupported (kind, functional) combination: " + s.kind + "/" + s.functional);
  if (s.density_level < 0 || s.density_level > 20) throw config_error("density_level must lie in [0, 20]");
  Law law;
  law.spec = s;
  auto kind = parse_kind(s.kind);
  if (kind == DgpKind::discrete) {
    law.discrete = random_discrete_law(s.functional, s.support, s.seed);
    auto fn = functional_by_name(s.functional, s.tau);
    auto t = discrete_truth(fn, law.discrete);
    auto L = std::make_shared<DiscreteDGP>(law.discrete);
    auto tb = std::make_shared<Vec>(t.b), tp = std::make_shared<Vec>(t.p), tg = std::make_shared<Vec>(t.g);
    law.truth.psi = t.psi;
    law.truth.b = [L, tb](const double* x) { return (*tb)(L->locate(x)); };
    law.truth.p = [L, tp](const double* x) { return (*tp)(L->locate(x)); };
    law.truth.g = [L, tg](const double* x) { return (*tg)(L->locate(x)); };
    return law;
  }
  int lv = kind == DgpKind::span ? s.span_level : s.levels;
  if (lv < 1 || lv > 50) throw config_error("wavelet levels must lie in [1, 50]");
  bool bounded = s.functional == "1b" || s.functional == "1c" || s.functional == "2a" || s.binary;
  if (bounded && s.radius > 0.5) throw config_error("probabilities need radius <= 1/2");
  law.bf = {0.5, amplitude_for(s.beta_b, lv, s.radius), s.beta_b, lv, derive_seed(s.seed, 0xb)};
  law.pf = {0.5, amplitude_for(s.beta_p, lv, s.radius), s.beta_p, lv, derive_seed(s.seed, 0xa)};
  if (s.functional == "1a" || s.functional == "1a-sq") law.pf = law.bf;  // b = p
  if (s.functional == "2a") law.pf.c0 = 0.6;  // response propensity
  std::size_t nd = std::size_t(1) << s.density_level;
  law.dens.assign(nd, 1.0);
  if (s.density_level > 0) {
    auto df = detail::density_function(s);
    for (std::size_t c = 0; c < nd; ++c) law.dens[c] = df((double(c) + 0.5) / double(nd));
  }
  if (kind == DgpKind::holder) law.truth.decay_slope_b = projection_decay_slope(law.bf, 3, 10);
  double acc = 0.0;
  for (double v : law.dens) law.cum.push_back(acc += v / double(nd));

  // within a density cell the levels >= density_level integrate to 0 and are orthonormal
  int Lg = s.density_level;
  auto bf = law.bf, pf = law.pf;
  double eb = bf.tail_energy(Lg);
  double mean_b = law.cell_integral([&](double x) { return bf.eval(x, Lg); });
  double mean_p = law.cell_integral([&](double x) { return pf.eval(x, Lg); });
  double sq_b = law.cell_integral([&](double x) { double v = bf.eval(x, Lg); return v * v; }) + eb;
  double sq_p = law.cell_integral([&](double x) { double v = pf.eval(x, Lg); return v * v; }) + pf.tail_energy(Lg);
  const auto& f = s.functional;
  if (f == "1a" || f == "1a-sq") law.truth.psi = sq_b;
  else if (f == "1b") law.truth.psi = 0.5 * (mean_p - sq_p);  // Y = mu + 0.5 A + noise
  else if (f == "1c") law.truth.psi = 0.0;                     // at tau = tau0
  else if (f == "2a") law.truth.psi = mean_b;
  auto dens = std::make_shared<std::vector<double>>(law.dens);
  int dl = s.density_level;
  auto dfun = [dens, dl](double x) { return dens->size() == 1 ? 1.0 : (*dens)[std::size_t(haar_cell(x, dl))]; };
  if (f == "1a" || f == "1a-sq" || f == "1b" || f == "1c") {
    // 1c: b at tau = tau0 is E[Y* - tau0 A | X]
    law.truth.b = [bf, pf, f](const double* x) { return f == "1b" ? bf(x[0]) + 0.5 * pf(x[0]) : bf(x[0]); };
    law.truth.p = [pf](const double* x) { return pf(x[0]); };
    double sg = f == "1b" || f == "1c" ? 1.0 : -1.0;
    law.truth.g = [dfun, sg](const double* x) { return sg * dfun(x[0]); };
  } else {
    law.truth.b = [bf](const double* x) { return bf(x[0]); };
    double fl = s.floor;
    law.truth.p = [pf, fl](const double* x) { return 1.0 / std::max(fl, pf(x[0])); };
    law.truth.g = [dfun, pf, fl](const double* x) { return -std::max(fl, pf(x[0])) * dfun(x[0]); };
  }
  return law;
}

//! n i.i.d. rows; deterministic in seed
inline Frame generate(const Law& law, long n, std::uint64_t seed) {
  if (n < 1) throw config_error("sample size must be positive");
  if (parse_kind(law.spec.kind) == DgpKind::discrete) return sample_discrete(law.discrete, n, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, law.spec.noise);
  const auto& s = law.spec;
  Frame f;
  f.y.resize(n);
  f.a.resize(n);
  f.x.resize(n, 1);
  double nd = double(law.dens.size());
  for (long i = 0; i < n; ++i) {
    double u = U(rng);
    auto c = std::size_t(std::lower_bound(law.cum.begin(), law.cum.end(), u * law.cum.back()) - law.cum.begin());
    c = std::min(c, law.dens.size() - 1);
    double x = (double(c) + U(rng)) / nd;
    x = std::min(x, std::nextafter(1.0, 0.0));
    double b = law.bf(x), p = law.pf(x);
    double a = 0.0, y = 0.0;
    if (s.functional == "1a" || s.functional == "1a-sq") {
      if (s.binary) {
        y = U(rng) < b ? 1.0 : 0.0;
        a = U(rng) < p ? 1.0 : 0.0;
      } else {
        y = b + N(rng);
        a = p + N(rng);
      }
      if (s.functional == "1a-sq") a = 0.0;
    } else if (s.functional == "1b") {
      a = U(rng) < p ? 1.0 : 0.0;
      y = b + 0.5 * a + N(rng);
    } else if (s.functional == "1c") {
      a = U(rng) < p ? 1.0 : 0.0;
      y = b + s.tau * a + N(rng);  // Y* with root tau
    } else {
      a = U(rng) < std::max(s.floor, p) ? 1.0 : 0.0;
      y = a ? b + N(rng) : 0.0;
    }
    f.x(i, 0) = x;
    f.y(i) = y;
    f.a(i) = a;
  }
  return f;
}

}  // namespace hoif::harness
