#pragma once

#include "hoif/hoif.hpp"

#include <boost/math/distributions/normal.hpp>

namespace hoif {

// ---------------------------------------------------------------- quantiles

//! upper quantile z with P(N(0,1) > z) = a; a in (0, 1]
inline double z_upper(double a) {
  if (!(a > 0.0 && a <= 1.0)) throw config_error("tail probability must lie in (0, 1]");
  if (a > 0.5) return a == 1.0 ? -std::numeric_limits<double>::infinity() : -z_upper(1.0 - a);
  return boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(), a));
}

//! two-sided critical value z_{1 - alpha/2}; alpha = 1 gives 0
inline double z_two_sided(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw config_error("alpha must lie in (0, 1]");
  return alpha == 1.0 ? 0.0 : z_upper(alpha / 2.0);
}

// ----------------------------------------------------------------- variance

//! n^{-1} times the empirical mean of IF_1^2 for given kernel values
inline double variance_w1(const Vec& if1) {
  long n = if1.size();
  if (n < 1) throw domain_error("empty first-order kernel");
  return if1.squaredNorm() / double(n) / double(n);
}

struct VarianceConfig {
  long subsample = 2000;  // j-subsets for orders >= 3
  std::uint64_t seed = 0;
};

//! fills w2_1, w2_jj and w2 = w2_1 + sum_j w2_jj for a psi_{m,k} report
inline void variance_estimate(const EstimationInput& in, EstimateReport& rep, const VarianceConfig& vc = {}) {
  Vec if1 = in.r.plugin.array() - in.r.plugin.mean();
  rep.w2_1 = variance_w1(if1);
  rep.w2_jj.clear();
  for (int j = 2; j <= rep.m; ++j) {
    auto s = standard_chain(j, in.r.eps, in.r.delta, in.r.c, in.Z, 0, rep.k);
    double w = j == 2 ? ustat_variance_j2(s) : ustat_variance_subsample(s, vc.subsample, derive_seed(vc.seed, 0x5ab, j));
    rep.w2_jj.push_back(std::max(0.0, w));
  }
  double t = rep.w2_1;
  for (double w : rep.w2_jj) t += w;
  rep.w2 = t;
}

// ------------------------------------------------------------------ intervals

enum class BiasMode { none, k_inflate, explicit_bound };

struct ConfidenceInterval {
  double center = 0.0, half = 0.0, level = 0.95;
  BiasMode mode = BiasMode::none;
  double bias_allowance = 0.0;

  double lo() const { return center - half; }
  double hi() const { return center + half; }
  bool covers(double v) const { return v >= lo() && v <= hi(); }
};

//! psi +/- (z W + C_bias * sqrt(var_order)); var_order < 0 falls back to W^2
inline ConfidenceInterval confidence_interval(double psi, double W, double alpha, BiasMode mode = BiasMode::none,
                                              std::optional<double> C_bias = std::nullopt, double var_order = -1.0) {
  if (!(W >= 0.0)) throw domain_error("standard error must be nonnegative");
  ConfidenceInterval ci;
  ci.center = psi;
  ci.level = 1.0 - alpha;
  ci.mode = mode;
  ci.half = z_two_sided(alpha) * W;
  if (mode == BiasMode::explicit_bound) {
    if (!C_bias) throw config_error("explicit bias mode needs C_bias");
    if (*C_bias < 0) throw config_error("C_bias must be nonnegative");
    ci.bias_allowance = *C_bias * std::sqrt(var_order >= 0.0 ? var_order : W * W);
    ci.half += ci.bias_allowance;
  }
  return ci;
}

//! k* = n^{factor * kappa_opt}
inline long inflated_k(const Plan& p, double n, double factor = 1.2) {
  return std::max(1L, long(std::llround(std::pow(n, factor * p.kappa))));
}

// ---------------------------------------------------------------- inversion

struct RootSet {
  std::vector<std::pair<double, double>> intervals;  // closed, grid endpoints
  std::vector<bool> member;                           // per grid point, grid order
  bool empty() const { return intervals.empty(); }
  bool contains(double t) const {
    for (auto& [a, b] : intervals)
      if (t >= a && t <= b) return true;
    return false;
  }
};

//! {tau : |psi(tau)| / W(tau) < z}, merged over runs of consecutive grid points
inline RootSet invert_ci_for_root(const std::vector<double>& grid, const std::vector<double>& psi,
                                  const std::vector<double>& W, double alpha) {
  if (grid.empty()) throw config_error("empty tau grid");
  if (psi.size() != grid.size() || W.size() != grid.size()) throw domain_error("grid and estimates differ in size");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw config_error("tau grid must be strictly increasing");
  double z = z_two_sided(alpha);
  RootSet r;
  r.member.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(W[i] > 0.0)) throw domain_error("W(tau) must be positive on the grid");
    r.member[i] = std::abs(psi[i]) < z * W[i];
  }
  for (std::size_t i = 0; i < grid.size();) {
    if (!r.member[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < grid.size() && r.member[j + 1]) ++j;
    r.intervals.push_back({grid[i], grid[j]});
    i = j + 1;
  }
  return r;
}

// ------------------------------------------------------------------- balls

//! {b* : mean over estimation rows of (b* - bhat)^2 <= psi* + z W*}
struct ConfidenceBall {
  Vec center;          // bhat on the estimation rows
  double raw_bound = 0.0;
  double bound = 0.0;  // floored at 0
  bool floored = false;

  bool member(const Vec& bstar) const {
    if (bstar.size() != center.size()) throw domain_error("candidate evaluated on a different row set");
    return (bstar - center).squaredNorm() / double(center.size()) <= bound;
  }
  double diameter() const { return std::sqrt(bound); }
};

inline ConfidenceBall confidence_ball(const Vec& bhat_rows, double psi_star, double W_star, double alpha) {
  if (bhat_rows.size() < 1) throw domain_error("ball needs estimation rows");
  ConfidenceBall b;
  b.center = bhat_rows;
  b.raw_bound = psi_star + z_upper(alpha) * W_star;
  b.floored = b.raw_bound < 0.0;
  b.bound = std::max(0.0, b.raw_bound);
  return b;
}

//! regimes d(x) = 1[b*(x) > 0] induced by ball members, restricted to the estimation rows
struct RegimeSet {
  ConfidenceBall ball;

  //! smallest mean (b* - bhat)^2 over b* inducing r
  double cost(const std::vector<int>& r) const {
    if (long(r.size()) != ball.center.size()) throw domain_error("regime given on a different row set");
    double s = 0.0;
    for (long i = 0; i < ball.center.size(); ++i) {
      double b = ball.center(i);
      bool bad = r[std::size_t(i)] ? b <= 0.0 : b > 0.0;
      if (bad) s += b * b;
    }
    return s / double(r.size());
  }
  bool contains(const std::vector<int>& r) const { return cost(r) <= ball.bound; }
  std::vector<int> center_regime() const {
    std::vector<int> r(static_cast<std::size_t>(ball.center.size()));
    for (long i = 0; i < ball.center.size(); ++i) r[std::size_t(i)] = ball.center(i) > 0.0;
    return r;
  }
  //! rows whose sign may flip inside the ball on their own
  std::vector<long> ambiguous_rows() const {
    std::vector<long> out;
    for (long i = 0; i < ball.center.size(); ++i)
      if (ball.center(i) * ball.center(i) / double(ball.center.size()) <= ball.bound) out.push_back(i);
    return out;
  }
};

inline RegimeSet regime_set(const ConfidenceBall& ball) { return {ball}; }

}  // namespace hoif
