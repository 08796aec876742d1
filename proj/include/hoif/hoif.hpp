#pragma once

#include "hoif/functionals.hpp"

#include <optional>
#include <sstream>

namespace hoif {

// ------------------------------------------------------------------ reports

struct Block {
  std::string name;
  double value = 0.0;
};

struct EstimateReport {
  std::string functional;
  int m = 1;
  long k = 0;
  double plugin = 0.0;          // psi-hat + IF_1 = V[H(Bhat, Phat)]
  std::vector<double> if_jj;    // j = 2..m, signed
  std::vector<Block> blocks;    // psi-eff blocks, signed as added
  double estimate = 0.0;
  double w2_1 = 0.0;
  std::vector<double> w2_jj;
  double w2 = 0.0;
  ClipCounts clips;
  std::uint64_t seed = 0;

  double component_sum() const {
    std::vector<double> parts{plugin};
    for (double v : if_jj) parts.push_back(v);
    for (auto& b : blocks) parts.push_back(b.value);
    double s = 0.0;
    for (double v : parts) s += v;
    return s;
  }
};

//! estimation-half quantities shared by the estimators
struct EstimationInput {
  Frame est;
  Residuals r;
  FeatureMap Z;
};

inline EstimationInput make_input(const Frame& est, const DRFunctional& fn, const NuisanceEstimate& nu,
                                  FeatureMap Z) {
  if (Z.rows() != est.size()) throw domain_error("feature rows do not match the estimation half");
  return {est, residuals(fn, nu, est), std::move(Z)};
}

inline EstimationInput make_input(const Frame& est, const DRFunctional& fn, const NuisanceEstimate& nu,
                                  const WeightedBasis& wb) {
  if (wb.train_tag != nu.train_tag)
    throw config_error("basis and nuisances were built from different training halves");
  return make_input(est, fn, nu, FeatureMap::of(wb.features_at(Mat(est.x))));
}

//! ordered-tuple U-statistic of the standard chain on [0,k), unsigned
inline double chain_u(const EstimationInput& in, int j, long lo, long hi) {
  return ustat_chain(standard_chain(j, in.r.eps, in.r.delta, in.r.c, in.Z, lo, hi));
}

// --------------------------------------------------------------- psi_{m,k}

inline EstimateReport estimate_psi_mk(const EstimationInput& in, const std::string& name, int m, long k) {
  if (m < 1) throw config_error("order m must be >= 1");
  if (in.est.size() < m) throw arity_error("estimation half has fewer than m rows");
  if (k < 1 || k > in.Z.dim()) throw config_error("k outside the basis size");
  EstimateReport rep;
  rep.functional = name;
  rep.m = m;
  rep.k = k;
  rep.plugin = in.r.plugin.mean();
  for (int j = 2; j <= m; ++j) {
    double sign = (j % 2) ? 1.0 : -1.0;  // (-1)^{j-1}
    rep.if_jj.push_back(sign * chain_u(in, j, 0, k));
  }
  rep.estimate = rep.component_sum();
  return rep;
}

// ------------------------------------------------------------ psi^mod

//! chain for the (m+1)-robust kernel of order j; Einv[s] = inverse auxiliary moment matrix for s = 3..
inline ChainSpec mod_chain(const EstimationInput& in, int j, long k, const std::vector<Mat>& Einv) {
  Mat Z = in.Z.to_dense().leftCols(k);
  auto Zf = FeatureMap::of(Z);
  ChainSpec s = standard_chain(j, in.r.eps, in.r.delta, in.r.c, Zf, 0, k);
  // node p (middle p >= 2) and the right node carry Einv_{p+1} / Einv_j on their incoming vector
  for (int p = 2; p + 1 < j; ++p) s.edges[std::size_t(p - 1)].in = FeatureMap::of(Mat(Z * Einv[std::size_t(p + 1 - 3)]));
  if (j >= 3) s.edges.back().in = FeatureMap::of(Mat(Z * Einv[std::size_t(j - 3)]));
  return s;
}

//! aux[s-3] = E_s[Bdot Pdot H1 Zbar Zbar^T] (k x k, Zbar coordinates) for s = 3..m
inline EstimateReport estimate_psi_mod(const EstimationInput& in, const std::string& name, int m, long k,
                                       const std::vector<Mat>& aux) {
  if (m < 3) throw config_error("psi-mod needs m >= 3");
  if (int(aux.size()) < m - 2) throw config_error("psi-mod needs m-2 auxiliary moment matrices");
  std::vector<Mat> Einv;
  for (auto& E : aux) {
    if (E.rows() != k || E.cols() != k) throw domain_error("auxiliary moment matrix is not k x k");
    Einv.push_back(inv_sym(E));
  }
  EstimateReport rep;
  rep.functional = name + "-mod";
  rep.m = m;
  rep.k = k;
  rep.plugin = in.r.plugin.mean();
  for (int j = 2; j <= m; ++j) {
    double sign = (j % 2) ? 1.0 : -1.0;
    rep.if_jj.push_back(sign * ustat_chain(mod_chain(in, j, k, Einv)));
  }
  rep.estimate = rep.component_sum();
  return rep;
}

// ---------------------------------------------------------- exact moments

//! exact E_theta of every component of psi_{m,k} (and psi^mod when aux is given) on a discrete law
struct ExactComponents {
  double plugin = 0.0;
  std::vector<double> if_jj;
  double total() const {
    double s = plugin;
    for (double v : if_jj) s += v;
    return s;
  }
};

inline ExactComponents expected_components(const DiscreteDGP& law, const DRFunctional& fn,
                                           const NuisanceEstimate& nu, const DiscreteBasis& db, int m,
                                           const std::vector<Mat>* aux = nullptr) {
  auto en = law.enumerate();
  Residuals r = residuals(fn, nu, en.rows);
  Mat Zrows(en.rows.size(), db.Z.cols());
  for (long i = 0; i < en.rows.size(); ++i) Zrows.row(i) = db.Z.row(en.point[std::size_t(i)]);
  EstimationInput in{en.rows, r, FeatureMap::of(Zrows)};
  ExactComponents out;
  out.plugin = (en.prob.array() * r.plugin.array()).sum();
  long k = db.Z.cols();
  std::vector<Mat> Einv;
  if (aux)
    for (auto& E : *aux) Einv.push_back(inv_sym(E));
  for (int j = 2; j <= m; ++j) {
    double sign = (j % 2) ? 1.0 : -1.0;
    ChainSpec s = aux ? mod_chain(in, j, k, Einv) : standard_chain(j, r.eps, r.delta, r.c, in.Z, 0, k);
    out.if_jj.push_back(sign * chain_expectation(s, en.prob));
  }
  return out;
}

//! closed form (-1)^{m-1} u^T (Sigma - I)^{m-1} Sigma^{-1} v
inline double eb_closed_form(const TruncatedMoments& t, int m) {
  long k = t.Sigma.rows();
  Mat D = t.Sigma - Mat::Identity(k, k);
  Vec w = inv_sym(t.Sigma) * t.v;
  for (int i = 0; i < m - 1; ++i) w = D * w;
  return ((m - 1) % 2 ? -1.0 : 1.0) * t.u.dot(w);
}

//! (-1)^{m-1} u^T (Sigma - I) prod_{s=3}^m [E_s^{-1}(Sigma - E_s)] Sigma^{-1} v
inline double mod_bias_closed_form(const TruncatedMoments& t, int m, const std::vector<Mat>& aux) {
  long k = t.Sigma.rows();
  Mat D = t.Sigma - Mat::Identity(k, k);
  Vec w = inv_sym(t.Sigma) * t.v;
  for (int s = m; s >= 3; --s) {
    const Mat& E = aux[std::size_t(s - 3)];
    w = inv_sym(E) * ((t.Sigma - E) * w);
  }
  w = D * w;
  return ((m - 1) % 2 ? -1.0 : 1.0) * t.u.dot(w);
}

//! moment matrix of Bdot Pdot H1 Zbar Zbar^T under a different g (masses on the support)
inline Mat aux_moment(const DiscreteDGP& law, const DiscreteBasis& db, const Vec& g_alt) {
  Mat E = Mat::Zero(db.Z.cols(), db.Z.cols());
  for (long g = 0; g < law.points(); ++g) {
    Vec z = db.Z.row(g).transpose();
    E += db.bdot(g) * db.pdot(g) * g_alt(g) * z * z.transpose();
  }
  return E;
}

// -------------------------------------------------------------- planning

struct HolderConfig {
  double beta_b = 0.5, beta_p = 0.5, beta_g = 0.5;
  int d = 1;
  double C_b = 1.0, C_p = 1.0, C_g = 1.0;

  double beta() const { return 0.5 * (beta_b + beta_p); }
  double delta() const { return beta_b > 0 ? std::abs(beta_p / beta_b - 1.0) : std::numeric_limits<double>::infinity(); }
  void validate(bool planning_only = false) const {
    if (d < 1) throw config_error("d must be >= 1");
    if (beta_p <= 0 || beta_g <= 0 || beta_b < 0 || (!planning_only && beta_b <= 0))
      throw config_error("Holder exponents must be positive");
  }
};

struct Plan {
  int m = 2;
  double kappa = 1.0;  // k = n^kappa
  long k = 1;
  double tb_exp = 0, eb_exp = 0, se_exp = 0, rate_exp = 0;  // orders of n (root scale)
  bool eligible = true;
  std::string diagnostics;
};

namespace detail {

inline double var_exp(int m, double kappa) { return -1.0 + std::max(0.0, (m - 1) * (kappa - 1.0)); }
inline double tb2_exp(const HolderConfig& c, double kappa) { return -4.0 * c.beta() * kappa / c.d; }
inline double eb2_exp(const HolderConfig& c, int m) {
  double d = c.d;
  return -2.0 * ((m - 1) * c.beta_g / (2 * c.beta_g + d) + c.beta_b / (d + 2 * c.beta_b) +
                 c.beta_p / (d + 2 * c.beta_p));
}

//! smallest kappa with variance exponent >= squared-bias exponent
inline double balance_kappa(const HolderConfig& c, int m, bool g_known) {
  auto gap = [&](double kap) {
    double b = tb2_exp(c, kap);
    if (!g_known) b = std::max(b, eb2_exp(c, m));
    return var_exp(m, kap) - b;
  };
  double lo = 0.0, hi = 64.0;
  if (gap(lo) >= 0) return lo;
  if (gap(hi) < 0) return hi;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (gap(mid) >= 0 ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace detail

inline Plan plan_mk(const HolderConfig& cfg, double n, bool g_known) {
  cfg.validate(true);
  if (n < 2) throw config_error("plan needs n >= 2");
  Plan best;
  double best_mse = std::numeric_limits<double>::infinity();
  int mmax = g_known ? 2 : 10;
  std::ostringstream diag;
  for (int m = 2; m <= mmax; ++m) {
    double kap = detail::balance_kappa(cfg, m, g_known);
    double v = detail::var_exp(m, kap), tb = detail::tb2_exp(cfg, kap);
    double eb = g_known ? -std::numeric_limits<double>::infinity() : detail::eb2_exp(cfg, m);
    double mse = std::max({v, tb, eb});
    diag << "m=" << m << " kappa=" << kap << " mse_exp=" << mse << "; ";
    if (mse < best_mse - 1e-12) {
      best_mse = mse;
      best.m = m;
      best.kappa = kap;
      best.tb_exp = tb / 2;
      best.eb_exp = eb / 2;
      best.se_exp = v / 2;
      best.rate_exp = mse / 2;
    }
  }
  best.k = std::max(1L, long(std::llround(std::pow(n, best.kappa))));
  best.diagnostics = diag.str();
  return best;
}

struct Eligibility {
  bool eligible = false;
  double threshold = 0.0;  // beta_g / d
};

inline Eligibility check_rate_eligibility(HolderConfig cfg) {
  if (cfg.beta_b > cfg.beta_p) std::swap(cfg.beta_b, cfg.beta_p);
  double r4 = 4.0 * cfg.beta() / cfg.d;
  double D = cfg.delta();
  double R = std::isinf(D) ? r4 * (1 - r4) / (1 + r4) : r4 * (1 - r4) / (1 + r4) * (D + 1) / (D + 2);
  Eligibility e;
  double x = cfg.beta_g / cfg.d;
  e.threshold = R <= 0 ? 0.0 : R / (2.0 * (1.0 - R));
  e.eligible = 2 * x / (2 * x + 1) > R;
  return e;
}

//! order bound of the efficient estimator
inline int eq_m(const HolderConfig& c) {
  double d = c.d, b = c.beta();
  double v = (4 * b / (d + 4 * b) - c.beta_b / (d + 2 * c.beta_b) - c.beta_p / (d + 2 * c.beta_p)) * (2 + d / c.beta_g) + 1;
  return int(std::floor(v)) + 1;
}

struct KGrid {
  int J = 0;
  double q = 0.0, cstar = 0.0;
  int m = 3;
  // exponents of n: idx 0 -> k_{-1}, idx 1 -> k_0, ..., idx 2J+3 -> k_{2J+2}
  std::vector<double> expo;
  std::vector<long> k;
  double n = 0;

  long at(int i) const {
    if (i == -2) return 0;
    return k[std::size_t(i + 1)];
  }
  double exp_at(int i) const { return expo[std::size_t(i + 1)]; }
};

inline KGrid build_kgrid(HolderConfig cfg, double n) {
  if (cfg.beta_b > cfg.beta_p) std::swap(cfg.beta_b, cfg.beta_p);
  cfg.validate();
  auto el = check_rate_eligibility(cfg);
  if (!el.eligible) throw config_error("configuration fails the rate eligibility condition");
  double r4 = 4.0 * cfg.beta() / cfg.d, D = cfg.delta();
  double x = 2.0 * cfg.beta_g / cfg.d;
  double target = (3 + r4) / (2 * (1 + r4));
  KGrid g;
  g.n = n;
  g.cstar = x / (x + 1) * (D + 2) / r4 - 2 * (D + 2) / (r4 + 1) + (3 + r4) / (1 + r4);
  auto geo = [&](int s) {
    double t = 0.0;
    for (int l = 1; l <= s; ++l) t += std::pow(1 + D, l - 1);
    return t;
  };
  int J = 0;
  while (std::pow(1 + D, J + 1) + g.cstar * geo(J + 1) <= target) {
    if (++J > 64) throw config_error("grid depth does not converge");
  }
  g.J = J;
  g.q = (target - std::pow(1 + D, J + 1)) / geo(J + 1);
  g.m = std::max(3, eq_m(cfg));
  double hyper = (3 + r4) / (1 + r4);
  std::vector<double> e(std::size_t(2 * J + 4));
  e[0] = 2.0 / (1 + r4);
  for (int s = 0; s <= J + 1; ++s) e[std::size_t(2 * s + 1)] = std::pow(1 + D, s) + g.q * geo(s);
  for (int s = 0; s <= J; ++s) e[std::size_t(2 * s + 2)] = hyper - e[std::size_t(2 * s + 3)];
  g.expo = e;
  g.k.resize(e.size());
  long top = long(std::llround(std::pow(n, target)));
  for (std::size_t i = 0; i < e.size(); ++i) {
    int idx = int(i) - 1;
    if (idx == -1) g.k[i] = long(std::llround(std::pow(n, e[i])));
    else if (idx % 2 == 0) g.k[i] = long(std::ceil(std::pow(n, e[i]) - 1e-9));
  }
  g.k[1] = long(std::llround(n));
  for (std::size_t i = 1; i < e.size(); ++i) {
    int idx = int(i) - 1;
    if (idx % 2 == 1) g.k[i] = long(std::floor(std::pow(n, hyper) / double(g.k[i + 1]) + 1e-9));
  }
  g.k[std::size_t(2 * J + 2)] = top;
  g.k[std::size_t(2 * J + 3)] = top;
  return g;
}

struct Rect {
  long p_lo, p_hi, b_lo, b_hi;
};

inline std::vector<Rect> omega_rects(const KGrid& g) {
  std::vector<Rect> out;
  for (int s = 0; s <= g.J; ++s) {
    out.push_back({g.at(2 * s - 2), g.at(2 * s - 1), g.at(2 * s - 2), g.at(2 * s)});
    out.push_back({g.at(2 * s - 2), g.at(2 * s), g.at(2 * s), g.at(2 * s - 1)});
  }
  out.push_back({g.at(2 * g.J), g.at(2 * g.J + 1), g.at(2 * g.J), g.at(2 * g.J + 1)});
  return out;
}

// -------------------------------------------------------------- psi^eff

//! U_v with per-edge segments (edge l-1 carries segment l); unsigned
inline double u_segments(const EstimationInput& in, int v, const std::vector<std::pair<long, long>>& seg) {
  ChainSpec s = standard_chain(v, in.r.eps, in.r.delta, in.r.c, in.Z, 0, 0);
  for (int e = 0; e + 1 < v; ++e) {
    auto [lo, hi] = seg[std::size_t(e)];
    if (hi <= lo)
      throw config_error("empty segment [" + std::to_string(lo) + "," + std::to_string(hi) + ") at position " +
                         std::to_string(e + 1));
    s.edges[std::size_t(e)].lo = lo;
    s.edges[std::size_t(e)].hi = hi;
  }
  return ustat_chain(s);
}

namespace detail {
inline std::vector<std::pair<long, long>> base_segs(int v, long k0) {
  return std::vector<std::pair<long, long>>(std::size_t(v - 1), {0, k0});
}
}  // namespace detail

inline double block_H(const EstimationInput& in, const KGrid& g, int v) {
  long k0 = g.at(0), km1 = g.at(-1);
  double s = u_segments(in, v, detail::base_segs(v, k0));
  for (int u = 1; u <= v - 1; ++u) {
    auto seg = detail::base_segs(v, k0);
    seg[std::size_t(u - 1)] = {k0, km1};
    s += u_segments(in, v, seg);
  }
  return s;
}

inline double block_G(const EstimationInput& in, const KGrid& g, int s, int v) {
  long k0 = g.at(0);
  double acc = 0.0;
  for (int u = 1; u <= v - 2; ++u) {
    auto a = detail::base_segs(v, k0);
    a[std::size_t(u - 1)] = {g.at(2 * s - 2), g.at(2 * s - 1)};
    a[std::size_t(u)] = {g.at(2 * s - 2), g.at(2 * s)};
    acc += u_segments(in, v, a);
    auto b = detail::base_segs(v, k0);
    b[std::size_t(u - 1)] = {g.at(2 * s - 2), g.at(2 * s)};
    b[std::size_t(u)] = {g.at(2 * s), g.at(2 * s - 1)};
    acc += u_segments(in, v, b);
  }
  return acc;
}

inline double block_Q(const EstimationInput& in, const KGrid& g, int v) {
  long k0 = g.at(0);
  double acc = 0.0;
  for (int u = 1; u <= v - 2; ++u) {
    auto a = detail::base_segs(v, k0);
    a[std::size_t(u - 1)] = {g.at(2 * g.J), g.at(2 * g.J + 1)};
    a[std::size_t(u)] = {g.at(2 * g.J), g.at(2 * g.J + 1)};
    acc += u_segments(in, v, a);
  }
  return acc;
}

inline double u3_omega(const EstimationInput& in, const std::vector<Rect>& rects) {
  double s = 0.0;
  for (auto& r : rects) s += u_segments(in, 3, {{r.p_lo, r.p_hi}, {r.b_lo, r.b_hi}});
  return s;
}

//! psi-hat_{2,k_{-1}} + U_3(Omega) + sum_{v=4}^{m} (-1)^{v-1}(H*_v + sum_s G(s,v) + Q_v)
inline EstimateReport estimate_psi_eff(const EstimationInput& in, const std::string& name, const KGrid& g) {
  long km1 = g.at(-1);
  if (km1 > in.Z.dim()) throw config_error("basis smaller than k_{-1}");
  if (in.est.size() < g.m) throw arity_error("estimation half has fewer than m rows");
  EstimateReport rep;
  rep.functional = name + "-eff";
  rep.m = g.m;
  rep.k = km1;
  rep.plugin = in.r.plugin.mean();
  rep.blocks.push_back({"IF22[0,k-1)", -chain_u(in, 2, 0, km1)});
  rep.blocks.push_back({"U3(Omega)", u3_omega(in, omega_rects(g))});
  for (int v = 4; v <= g.m; ++v) {
    double sign = (v % 2) ? 1.0 : -1.0;
    rep.blocks.push_back({"H*_" + std::to_string(v), sign * block_H(in, g, v)});
    for (int s = 1; s <= g.J; ++s)
      rep.blocks.push_back({"G(" + std::to_string(s) + "," + std::to_string(v) + ")", sign * block_G(in, g, s, v)});
    rep.blocks.push_back({"Q_" + std::to_string(v), sign * block_Q(in, g, v)});
  }
  rep.estimate = rep.component_sum();
  return rep;
}

//! alternate form: plug-in - H*_2 + sum_{v=3}^{m} (-1)^{v-1}(H*_v + sum_s G(s,v) + Q_v)
inline double estimate_psi_eff_alt(const EstimationInput& in, const KGrid& g) {
  std::vector<double> parts{in.r.plugin.mean(), -block_H(in, g, 2)};
  for (int v = 3; v <= g.m; ++v) {
    double sign = (v % 2) ? 1.0 : -1.0;
    parts.push_back(sign * block_H(in, g, v));
    for (int s = 1; s <= g.J; ++s) parts.push_back(sign * block_G(in, g, s, v));
    parts.push_back(sign * block_Q(in, g, v));
  }
  double t = 0.0;
  for (double v : parts) t += v;
  return t;
}

// -------------------------------------------------------------- baselines

//! pairs of X-sorted rows: N^{-1} sum (Y_2i - Y_2i+1)(A_2i - A_2i+1); odd N drops the last row
inline double baseline_difference_estimator(const Frame& f, bool* dropped = nullptr) {
  if (f.dim() != 1) throw config_error("difference estimator needs d = 1");
  std::vector<long> order(std::size_t(f.size()));
  std::iota(order.begin(), order.end(), 0L);
  std::stable_sort(order.begin(), order.end(), [&](long i, long j) { return f.x(i, 0) < f.x(j, 0); });
  long N = f.size() - f.size() % 2;
  if (dropped) *dropped = N != f.size();
  if (N < 2) throw domain_error("difference estimator needs two rows");
  double s = 0.0;
  for (long t = 0; t + 1 < N; t += 2) {
    long i = order[std::size_t(t)], j = order[std::size_t(t + 1)];
    s += f.y(i) * f.a(i) + f.y(j) * f.a(j) - f.y(j) * f.a(i) - f.y(i) * f.a(j);
  }
  return s / double(N);
}

//! mean of (Y_i - Y_j)^2 / 2 over subcubes holding two or more points (one random pair each)
inline double baseline_subcube_variance(const Frame& f, long k, std::uint64_t seed) {
  int d = f.dim();
  long side = std::llround(std::pow(double(k), 1.0 / d));
  long kk = 1;
  for (int a = 0; a < d; ++a) kk *= side;
  if (k < 1 || kk != k) throw config_error("k must be a positive perfect d-th power");
  std::map<long, std::vector<long>> cubes;
  for (long i = 0; i < f.size(); ++i) {
    long c = 0;
    for (int a = 0; a < d; ++a) c = c * side + std::min(side - 1, long(f.x(i, a) * double(side)));
    cubes[c].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<double> vals;
  for (auto& [c, rows] : cubes) {
    if (rows.size() < 2) continue;
    std::uniform_int_distribution<std::size_t> U(0, rows.size() - 1);
    std::size_t a = U(rng), b = U(rng);
    while (b == a) b = U(rng);
    double diff = f.y(rows[a]) - f.y(rows[b]);
    vals.push_back(0.5 * diff * diff);
  }
  if (vals.empty()) throw domain_error("no subcube holds two points");
  return cascade_sum(vals) / double(vals.size());
}

}  // namespace hoif
