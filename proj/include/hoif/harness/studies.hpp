#pragma once

#include "hoif/harness/holder.hpp"
#include "hoif/harness/pool.hpp"
#include "hoif/inference.hpp"

#include <json.hpp>

#include <cstdio>
#include <map>

namespace hoif::harness {

struct budget_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StudyConfig {
  std::string study = "rates";
  DgpSpec dgp;
  HolderConfig holder;
  std::vector<long> n_grid{500, 1000, 2000, 4000};
  long reps = 200;
  std::vector<std::string> estimators{"psi_mk"};
  int m = 0;                 // 0: from the planner
  long k = 0;                // 0: from the planner
  double k_inflate = 1.0;    // k = n^{k_inflate * kappa}
  bool g_known = true;
  int fit_level = -1;        // -1: n^{d/(d+2 beta)} rule
  int g_level = -1;          // -1: n^{d/(d+2 beta_g)} rule
  double alpha = 0.05;
  std::string bias_mode = "none";
  double c_bias = 0.0;
  long variance_subsample = 2000;
  std::vector<long> k_grid;  // variance-scaling
  std::vector<int> orders{2, 3};
  double tau_lo = -1.0, tau_hi = 2.0;
  int tau_steps = 121;
  std::vector<int> exact_m{2, 3, 4};  // oracle-bias
  int exact_level = 2;
  double jitter = 0.3;
  std::uint64_t seed = 1;
  int threads = 1;
  double budget = 1e13;

  void validate() const {
    if (reps < 1) throw config_error("replication count must be >= 1");
    for (std::size_t i = 0; i < n_grid.size(); ++i) {
      if (n_grid[i] < 4) throw config_error("sample sizes must be >= 4");
      if (i && n_grid[i] <= n_grid[i - 1]) throw config_error("n grid must be strictly increasing");
    }
    if (!(alpha > 0 && alpha <= 1)) throw config_error("alpha must lie in (0, 1]");
    if (k_inflate <= 0) throw config_error("k_inflate must be positive");
    if (threads < 1) throw config_error("threads must be >= 1");
  }
};

//! one output row per replication and estimator
struct RepRow {
  std::uint64_t seed = 0;
  long n = 0;
  std::string estimator;
  double value = 0.0, w2 = 0.0;
  int covered = -1;  // -1: not applicable
  long k = 0;
};

inline std::string fmt17(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string rows_csv(const std::vector<RepRow>& rows) {
  std::string s = "seed,n,estimator,value,W2,covered,k\n";
  for (auto& r : rows)
    s += std::to_string(r.seed) + "," + std::to_string(r.n) + "," + r.estimator + "," + fmt17(r.value) + "," +
         fmt17(r.w2) + "," + std::to_string(r.covered) + "," + std::to_string(r.k) + "\n";
  return s;
}

// ---------------------------------------------------------------- planning

struct RepPlan {
  long n_train = 0, n_est = 0;
  Plan plan;
  long k = 1;
  int m = 2;
  int b_level = 1, p_level = 1, g_level = 1;
};

inline RepPlan plan_rep(const StudyConfig& c, long n) {
  RepPlan r;
  r.n_train = n / 2;
  r.n_est = n - r.n_train;
  double ne = double(r.n_est), nt = double(r.n_train);
  r.plan = plan_mk(c.holder, ne, c.g_known);
  r.m = c.m > 0 ? c.m : r.plan.m;
  r.k = c.k > 0 ? c.k : std::max(1L, long(std::llround(std::pow(ne, c.k_inflate * r.plan.kappa))));
  double d = c.holder.d;
  auto rule = [&](double beta) { return int(std::llround(std::log2(std::pow(nt, d / (d + 2.0 * beta))))); };
  r.b_level = c.fit_level >= 0 ? c.fit_level : std::max(1, rule(c.holder.beta_b));
  r.p_level = c.fit_level >= 0 ? c.fit_level : std::max(1, rule(c.holder.beta_p));
  r.g_level = c.g_level >= 0 ? c.g_level : std::max(1, rule(c.holder.beta_g));
  return r;
}

//! projected kernel-evaluation count; pairwise-structured work is counted as n_est * min(k, n_est) per order
inline double projected_cost(const StudyConfig& c) {
  double tot = 0.0;
  if (c.study == "variance-scaling") {
    for (long k : c.k_grid)
      for (int j : c.orders) tot += double(c.reps) * double(c.n_grid.at(0)) * double(k) * (j - 1);
    return tot;
  }
  for (long n : c.n_grid) {
    auto p = plan_rep(c, n);
    for (auto& e : c.estimators) {
      double per = double(p.n_est) * double(std::max(p.k, p.n_est)) * std::max(1, p.m - 1);
      if (e == "tau_root") per *= c.tau_steps;
      if (e == "psi_mod") per *= double(p.k);
      tot += double(c.reps) * per;
    }
  }
  return tot;
}

inline void budget_guard(const StudyConfig& c) {
  double cost = projected_cost(c);
  if (cost > c.budget)
    throw budget_error("projected kernel evaluations " + fmt17(cost) + " exceed the budget " + fmt17(c.budget));
}

// --------------------------------------------------------------- one dataset

struct Fitted {
  DRFunctional fn;
  NuisanceEstimate nu;
};

inline Fitted fit_for(const StudyConfig& c, const Law& law, const Frame& train, const RepPlan& p,
                      const DRFunctional& fn, int cap_level) {
  FitConfig fc;
  fc.b_level = std::min(p.b_level, cap_level);
  fc.p_level = std::min(p.p_level, cap_level);
  fc.g_level = p.g_level;
  fc.fit_g = !c.g_known;
  Fitted f{fn, fit_nuisances(train, fn, fc)};
  if (c.g_known) {
    f.nu.g = law.truth.g;
    f.nu.pc_level = std::max({fc.b_level, fc.p_level, law.spec.density_level});
  }
  return f;
}

inline int mra_level(long k) {
  int L = 0;
  while ((1L << L) < k) ++L;
  return std::max(L, 1);
}

//! largest level whose full Haar span sits inside the first k MRA functions
inline int span_level(long k) {
  int L = 0;
  while ((2L << L) <= k) ++L;
  return std::max(L, 1);
}

inline EstimationInput haar_input(const Frame& est, const Fitted& f, long k) {
  auto H = haar_weighted_features(est, mra_level(k), true, f.fn, f.nu);
  return make_input(est, f.fn, f.nu, FeatureMap::of(std::move(H)));
}

//! auxiliary moments E_s[w Zbar Zbar^T] for psi^mod from ghat fitted on disjoint training chunks
inline std::vector<Mat> mod_aux(const StudyConfig& c, const Law& law, const Frame& train, const Fitted& f,
                                const RepPlan& p, long k) {
  if (k > 1024) throw config_error("psi_mod is limited to k <= 1024");
  int L = mra_level(k);
  long cells = 1L << L;
  auto base = weight_cell_means(f.fn, f.nu, L);
  std::vector<Mat> out;
  long chunk = train.size() / std::max(1, p.m - 2);
  for (int s = 3; s <= p.m; ++s) {
    Frame part = train.slice(long(s - 3) * chunk, long(s - 2) * chunk);
    StudyConfig cs = c;
    cs.g_known = false;
    auto fs = fit_for(cs, law, part, p, f.fn, 30);
    fs.nu.b = f.nu.b;
    fs.nu.p = f.nu.p;
    fs.nu.pc_level = std::max(f.nu.pc_level, p.g_level);
    auto alt = weight_cell_means(f.fn, fs.nu, L);
    // Zbar at cell midpoints, then the cell sum of alt weight / base weight
    Vec mid(cells);
    for (long q = 0; q < cells; ++q) mid(q) = (double(q) + 0.5) / double(cells);
    auto H = make_haar_features(mid, L, true, base);
    Mat E = Mat::Zero(k, k);
    for (long q = 0; q < cells; ++q) {
      Vec z = H.dense_row(q).head(k);
      E += (alt[std::size_t(q)] / double(cells)) * z * z.transpose();
    }
    out.push_back(E);
  }
  return out;
}

inline double psi_truth_at(const Law& law) { return law.truth.psi; }

//! every selected estimator on one generated dataset
inline std::vector<RepRow> replicate(const StudyConfig& c, const Law& law, long n, std::uint64_t seed) {
  auto p = plan_rep(c, n);
  Frame all = generate(law, n, seed);
  auto sp = split_frame(all);
  double truth = psi_truth_at(law);
  double z = z_two_sided(c.alpha);
  auto fn = functional_by_name(law.spec.functional, law.spec.tau);
  std::vector<RepRow> out;
  auto push = [&](const std::string& name, double v, double w2, int cov, long k) {
    out.push_back({seed, n, name, v, w2, cov, k});
  };
  for (auto& e : c.estimators) {
    if (e == "psi1") {
      auto f = fit_for(c, law, sp.train, p, fn, 30);
      auto r = residuals(fn, f.nu, sp.est);
      double v = r.plugin.mean();
      double w2 = variance_w1(Vec(r.plugin.array() - v));
      push(e, v, w2, std::abs(v - truth) <= z * std::sqrt(w2), 0);
    } else if (e == "psi_mk" || e == "psi_mod") {
      auto f = fit_for(c, law, sp.train, p, fn, span_level(p.k));
      auto in = haar_input(sp.est, f, p.k);
      EstimateReport rep;
      if (e == "psi_mk") {
        rep = estimate_psi_mk(in, fn.name, p.m, p.k);
        variance_estimate(in, rep, {c.variance_subsample, derive_seed(seed, 0x7a)});
      } else {
        rep = estimate_psi_mod(in, fn.name, std::max(3, p.m), p.k, mod_aux(c, law, sp.train, f, p, p.k));
        rep.m = std::max(3, p.m);
        variance_estimate(in, rep, {c.variance_subsample, derive_seed(seed, 0x7a)});
      }
      BiasMode bm = c.bias_mode == "explicit" ? BiasMode::explicit_bound
                    : c.k_inflate > 1.0       ? BiasMode::k_inflate
                                              : BiasMode::none;
      auto ci = confidence_interval(rep.estimate, std::sqrt(rep.w2), c.alpha, bm,
                                    bm == BiasMode::explicit_bound ? std::optional<double>(c.c_bias) : std::nullopt);
      push(e, rep.estimate, rep.w2, ci.covers(truth), p.k);
    } else if (e == "psi_eff") {
      auto g = build_kgrid(c.holder, double(p.n_est));
      auto f = fit_for(c, law, sp.train, p, fn, span_level(g.at(0)));
      auto in = haar_input(sp.est, f, g.at(-1));
      auto rep = estimate_psi_eff(in, fn.name, g);
      Vec if1 = in.r.plugin.array() - in.r.plugin.mean();
      double w2 = variance_w1(if1) + ustat_variance_j2(standard_chain(2, in.r.eps, in.r.delta, in.r.c, in.Z, 0, g.at(-1)));
      push(e, rep.estimate, w2, std::abs(rep.estimate - truth) <= z * std::sqrt(w2), g.at(-1));
    } else if (e == "difference") {
      double v = baseline_difference_estimator(sp.est);
      push(e, v, std::nan(""), -1, 0);
    } else if (e == "ball") {
      if (law.spec.functional != "1a-sq") throw config_error("ball estimator needs the 1a-sq functional");
      auto f = fit_for(c, law, sp.train, p, fn, span_level(p.k));
      auto bfn = ball_functional(fn, f.nu.b);
      Fitted fb{bfn, f.nu};
      auto in = haar_input(sp.est, fb, p.k);
      auto rep = estimate_psi_mk(in, bfn.name, 2, p.k);
      variance_estimate(in, rep, {c.variance_subsample, derive_seed(seed, 0x7b)});
      Vec bh(sp.est.size()), bt(sp.est.size());
      for (long i = 0; i < sp.est.size(); ++i) {
        bh(i) = f.nu.b(sp.est.xrow(i));
        bt(i) = law.truth.b(sp.est.xrow(i));
      }
      auto ball = confidence_ball(bh, rep.estimate, std::sqrt(rep.w2), c.alpha);
      if (!ball.floored && !ball.member(bh)) throw std::logic_error("ball center is not a member");
      push(e, ball.diameter(), rep.w2, ball.member(bt), p.k);
    } else if (e == "tau_root") {
      if (law.spec.functional != "1c") throw config_error("tau_root needs the 1c functional");
      std::vector<double> grid, ps, ws;
      for (int t = 0; t < c.tau_steps; ++t) {
        double tau = c.tau_lo + (c.tau_hi - c.tau_lo) * t / std::max(1, c.tau_steps - 1);
        auto ft = example_1c(tau);
        auto f = fit_for(c, law, sp.train, p, ft, span_level(p.k));
        auto in = haar_input(sp.est, f, p.k);
        auto rep = estimate_psi_mk(in, ft.name, 2, p.k);
        variance_estimate(in, rep, {c.variance_subsample, derive_seed(seed, 0x7c)});
        grid.push_back(tau);
        ps.push_back(rep.estimate);
        ws.push_back(std::max(1e-300, std::sqrt(rep.w2)));
      }
      auto rs = invert_ci_for_root(grid, ps, ws, c.alpha);
      double mid = rs.empty() ? std::nan("") : 0.5 * (rs.intervals.front().first + rs.intervals.back().second);
      // coverage of tau0 by the grid set: tau0 lies between two member grid points of one run
      bool cov = false;
      double step = (c.tau_hi - c.tau_lo) / std::max(1, c.tau_steps - 1);
      for (auto& [a, b] : rs.intervals)
        if (law.spec.tau >= a - 0.5 * step && law.spec.tau <= b + 0.5 * step) cov = true;
      push(e, mid, std::nan(""), cov, p.k);
    } else {
      throw config_error("unknown estimator '" + e + "'");
    }
  }
  return out;
}

// -------------------------------------------------------------- summaries

struct Cell {
  std::string estimator;
  long n = 0;
  long count = 0;
  double mean = 0, bias = 0, sd = 0, rmse = 0, coverage = std::nan(""), coverage_se = std::nan(""), mean_w2 = 0;
  long k = 0;
};

inline std::vector<Cell> summarize(const std::vector<RepRow>& rows, double truth, double root_truth = std::nan("")) {
  std::map<std::pair<std::string, long>, std::vector<const RepRow*>> g;
  std::vector<std::pair<std::string, long>> order;
  for (auto& r : rows) {
    auto key = std::make_pair(r.estimator, r.n);
    if (!g.count(key)) order.push_back(key);
    g[key].push_back(&r);
  }
  std::vector<Cell> out;
  for (auto& key : order) {
    auto& v = g[key];
    Cell c;
    c.estimator = key.first;
    c.n = key.second;
    // tau_root rows hold a root in tau, not a functional value
    const double t = c.estimator == "tau_root" ? root_truth : truth;
    std::vector<double> vals, sq, w2;
    long cov = 0, covn = 0;
    for (auto* r : v) {
      if (std::isnan(r->value)) continue;
      vals.push_back(r->value);
      sq.push_back((r->value - t) * (r->value - t));
      if (!std::isnan(r->w2)) w2.push_back(r->w2);
      if (r->covered >= 0) {
        cov += r->covered;
        ++covn;
      }
      c.k = r->k;
    }
    c.count = long(vals.size());
    if (c.count) {
      c.mean = cascade_sum(vals) / double(c.count);
      c.bias = c.mean - t;
      c.rmse = std::sqrt(cascade_sum(sq) / double(c.count));
      std::vector<double> dv;
      for (double x : vals) dv.push_back((x - c.mean) * (x - c.mean));
      c.sd = c.count > 1 ? std::sqrt(cascade_sum(dv) / double(c.count - 1)) : 0.0;
      c.mean_w2 = w2.empty() ? std::nan("") : cascade_sum(w2) / double(w2.size());
    }
    // rows with an undefined value still count as non-covering
    for (auto* r : v)
      if (std::isnan(r->value) && r->covered >= 0) {
        cov += r->covered;
        ++covn;
      }
    if (covn) {
      c.coverage = double(cov) / double(covn);
      c.coverage_se = std::sqrt(c.coverage * (1 - c.coverage) / double(covn));
    }
    out.push_back(c);
  }
  return out;
}

//! predicted root-scale exponent of each estimator's error
inline double predicted_exponent(const StudyConfig& c, const std::string& e) {
  double b = c.holder.beta() / c.holder.d;
  if (e == "psi1") return -std::min(0.5, 2.0 * b / (1.0 + 2.0 * b));
  if (e == "psi_eff") return -std::min(0.5, 4.0 * b / (4.0 * b + 1.0));
  if (e == "ball") {
    double bs = c.dgp.beta_b / c.holder.d;
    return std::max(-bs / (1.0 + 2.0 * bs), -2.0 * b / (1.0 + 4.0 * b));
  }
  return plan_mk(c.holder, 1000.0, c.g_known).rate_exp;
}

struct StudyResult {
  std::string csv;
  std::string json;
  std::vector<Cell> cells;
  std::map<std::string, double> slopes;  // estimator -> fitted log-log slope
};

using json = nlohmann::json;

inline json plan_json(const RepPlan& p) {
  return {{"n_train", p.n_train}, {"n_est", p.n_est}, {"m", p.m}, {"k", p.k}, {"kappa", p.plan.kappa},
          {"tb_exp", p.plan.tb_exp}, {"eb_exp", std::isinf(p.plan.eb_exp) ? json(nullptr) : json(p.plan.eb_exp)},
          {"se_exp", p.plan.se_exp}, {"rate_exp", p.plan.rate_exp}, {"b_level", p.b_level},
          {"g_level", p.g_level}, {"diagnostics", p.plan.diagnostics}};
}

inline json cell_json(const Cell& c) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"estimator", c.estimator}, {"n", c.n}, {"count", c.count}, {"k", c.k}, {"mean", num(c.mean)},
          {"bias", num(c.bias)}, {"sd", num(c.sd)}, {"rmse", num(c.rmse)}, {"mean_W2", num(c.mean_w2)},
          {"coverage", num(c.coverage)}, {"coverage_se", num(c.coverage_se)}};
}

//! rates and coverage share the replication loop; rates add log-log slopes
inline StudyResult run_replications(const StudyConfig& c) {
  c.validate();
  budget_guard(c);
  Law law = make_law(c.dgp);
  std::vector<std::pair<long, long>> jobs;
  for (long n : c.n_grid)
    for (long r = 0; r < c.reps; ++r) jobs.push_back({n, r});
  auto parts = run_indexed<std::vector<RepRow>>(jobs.size(), c.threads, [&](std::size_t i) {
    auto [n, r] = jobs[i];
    return replicate(c, law, n, derive_seed(c.seed, std::uint64_t(n), std::uint64_t(r)));
  });
  std::vector<RepRow> rows;
  for (auto& p : parts) rows.insert(rows.end(), p.begin(), p.end());
  StudyResult res;
  res.csv = rows_csv(rows);
  res.cells = summarize(rows, law.truth.psi, law.spec.tau);
  json j;
  j["study"] = c.study;
  j["truth"] = law.truth.psi;
  if (!std::isnan(law.truth.decay_slope_b)) j["projection_decay_slope_b"] = law.truth.decay_slope_b;
  j["reps"] = c.reps;
  j["seed"] = c.seed;
  for (long n : c.n_grid) j["plans"].push_back(plan_json(plan_rep(c, n)));
  for (auto& cell : res.cells) j["cells"].push_back(cell_json(cell));
  for (auto& e : c.estimators) {
    std::vector<double> lx, ly;
    for (auto& cell : res.cells)
      if (cell.estimator == e && cell.count > 0) {
        double v = e == "ball" ? cell.mean : cell.rmse;
        if (e == "tau_root") continue;
        lx.push_back(std::log(double(cell.n)));
        ly.push_back(std::log(v));
      }
    if (lx.size() >= 2) {
      res.slopes[e] = ls_slope(lx, ly);
      j["slopes"][e] = {{"fitted", res.slopes[e]}, {"predicted", predicted_exponent(c, e)}};
    }
  }
  res.json = j.dump(2);
  return res;
}

//! Var over replications of IF_jj at true nuisances, on a k grid at fixed n
inline StudyResult run_variance_scaling(const StudyConfig& c) {
  c.validate();
  if (c.k_grid.size() < 2) throw config_error("variance scaling needs at least two k values");
  budget_guard(c);
  Law law = make_law(c.dgp);
  long n = c.n_grid.at(0);
  auto fn = functional_by_name(c.dgp.functional, c.dgp.tau);
  long kmax = *std::max_element(c.k_grid.begin(), c.k_grid.end());
  auto parts = run_indexed<std::vector<RepRow>>(std::size_t(c.reps), c.threads, [&](std::size_t r) {
    std::uint64_t seed = derive_seed(c.seed, std::uint64_t(n), r);
    Frame f = generate(law, n, seed);
    auto nu = wrap_nuisances(law.truth.b, law.truth.p, law.truth.g);
    nu.pc_level = -1;
    auto H = haar_weighted_features(f, mra_level(kmax), true, fn, nu);
    auto in = make_input(f, fn, nu, FeatureMap::of(std::move(H)));
    std::vector<RepRow> out;
    for (int j : c.orders)
      for (long k : c.k_grid) out.push_back({seed, n, "IF" + std::to_string(j), chain_u(in, j, 0, k), std::nan(""), -1, k});
    return out;
  });
  std::vector<RepRow> rows;
  for (auto& p : parts) rows.insert(rows.end(), p.begin(), p.end());
  StudyResult res;
  res.csv = rows_csv(rows);
  json j;
  j["study"] = c.study;
  j["n"] = n;
  j["reps"] = c.reps;
  for (int ord : c.orders) {
    std::vector<double> lx, ly;
    std::string name = "IF" + std::to_string(ord);
    for (long k : c.k_grid) {
      std::vector<double> v;
      for (auto& r : rows)
        if (r.estimator == name && r.k == k) v.push_back(r.value);
      double m = cascade_sum(v) / double(v.size());
      std::vector<double> dv;
      for (double x : v) dv.push_back((x - m) * (x - m));
      double var = cascade_sum(dv) / double(v.size() - 1);
      j["cells"].push_back({{"order", ord}, {"k", k}, {"mean", m}, {"variance", var}});
      lx.push_back(std::log(double(k)));
      ly.push_back(std::log(var));
    }
    res.slopes[name] = ls_slope(lx, ly);
    j["slopes"][name] = {{"fitted", res.slopes[name]}, {"predicted", double(ord - 1)}};
  }
  res.json = j.dump(2);
  return res;
}

//! exact E[psi_{m,k}] - target on random discrete laws with jittered nuisances
struct ExactBias {
  double vs_truncated = 0.0, vs_psi = 0.0, closed_form = 0.0, tb = 0.0;
};

inline std::vector<ExactBias> exact_bias(const DiscreteDGP& law, const DRFunctional& fn, const NuisanceEstimate& nu,
                                         int level, const std::vector<int>& ms) {
  auto db = discrete_basis(make_tensor_basis(Family::haar_father, 1, level), law, fn, nu);
  auto tm = truncated_moments(law, fn, nu, db);
  int mmax = *std::max_element(ms.begin(), ms.end());
  auto ex = expected_components(law, fn, nu, db, mmax);
  double tb = truncation_bias_exact(law, fn, nu, db);
  double psi = discrete_truth(fn, law).psi;
  std::vector<ExactBias> out;
  for (int m : ms) {
    double e = ex.plugin;
    for (int j = 2; j <= m; ++j) e += ex.if_jj[std::size_t(j - 2)];
    out.push_back({e - tm.psi_tilde, e - psi, m >= 2 ? eb_closed_form(tm, m) : 0.0, tb});
  }
  return out;
}

inline StudyResult run_oracle_bias(const StudyConfig& c) {
  c.validate();
  auto fn = functional_by_name(c.dgp.functional, c.dgp.tau);
  auto parts = run_indexed<std::vector<RepRow>>(std::size_t(c.reps), c.threads, [&](std::size_t r) {
    std::uint64_t seed = derive_seed(c.seed, 0x0b1a5, r);
    auto law = random_discrete_law(c.dgp.functional, c.dgp.support, seed);
    auto t = discrete_truth(fn, law);
    std::mt19937_64 rng(derive_seed(seed, 1));
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    Vec b = t.b, p = t.p, g = t.g;
    for (long i = 0; i < b.size(); ++i) {
      b(i) += c.jitter * U(rng);
      p(i) += c.jitter * U(rng);
      g(i) *= 1.0 + c.jitter * U(rng);
    }
    if (fn.name == "2a") p = p.cwiseMax(1.05);
    auto nu = support_nuisances(law, b, p, g);
    auto eb = exact_bias(law, fn, nu, c.exact_level, c.exact_m);
    std::vector<RepRow> out;
    for (std::size_t i = 0; i < eb.size(); ++i) {
      int ok = std::abs(eb[i].vs_truncated - eb[i].closed_form) <= 1e-10 &&
               std::abs(eb[i].vs_psi - eb[i].vs_truncated - eb[i].tb) <= 1e-10;
      out.push_back({seed, law.points(), "EB" + std::to_string(c.exact_m[i]), eb[i].vs_truncated, eb[i].closed_form, ok, 0});
    }
    return out;
  });
  std::vector<RepRow> rows;
  for (auto& p : parts) rows.insert(rows.end(), p.begin(), p.end());
  StudyResult res;
  res.csv = rows_csv(rows);
  long ok = 0;
  double worst = 0.0;
  for (auto& r : rows) {
    ok += r.covered;
    worst = std::max(worst, std::abs(r.value - r.w2));
  }
  json j{{"study", c.study}, {"functional", c.dgp.functional}, {"laws", c.reps}, {"checks", rows.size()},
         {"matching", ok}, {"max_abs_gap", worst}};
  res.json = j.dump(2);
  return res;
}

//! single dataset (generated from the dgp, or supplied); one report per estimator
inline StudyResult run_estimate(const StudyConfig& c, const Frame* data = nullptr) {
  c.validate();
  budget_guard(c);
  if (!data) {
    Law law = make_law(c.dgp);
    auto rows = replicate(c, law, c.n_grid.at(0), c.seed);
    StudyResult res;
    res.csv = rows_csv(rows);
    json j{{"study", "estimate"}, {"truth", law.truth.psi}, {"plan", plan_json(plan_rep(c, c.n_grid.at(0)))}};
    for (auto& r : rows)
      j["estimates"].push_back({{"estimator", r.estimator}, {"value", r.value},
                                {"W2", std::isnan(r.w2) ? json(nullptr) : json(r.w2)}, {"k", r.k}});
    res.json = j.dump(2);
    return res;
  }
  // supplied data: nuisances fitted on the first half, g always estimated
  if (c.g_known) throw config_error("g cannot be known for supplied data; set g_known to false");
  auto fn = functional_by_name(c.dgp.functional, c.dgp.tau);
  auto p = plan_rep(c, data->size());
  auto sp = split_frame(*data);
  FitConfig fc;
  fc.b_level = std::min(p.b_level, span_level(p.k));
  fc.p_level = std::min(p.p_level, span_level(p.k));
  fc.g_level = p.g_level;
  Fitted f{fn, fit_nuisances(sp.train, fn, fc)};
  if (data->dim() != 1) throw config_error("supplied-data estimation uses structured Haar features and needs d = 1");
  auto in = haar_input(sp.est, f, p.k);
  auto rep = estimate_psi_mk(in, fn.name, p.m, p.k);
  variance_estimate(in, rep, {c.variance_subsample, derive_seed(c.seed, 0x7a)});
  auto ci = confidence_interval(rep.estimate, std::sqrt(rep.w2), c.alpha);
  std::vector<RepRow> rows{{c.seed, data->size(), "psi_mk", rep.estimate, rep.w2, -1, p.k}};
  StudyResult res;
  res.csv = rows_csv(rows);
  json j{{"study", "estimate"}, {"plan", plan_json(p)}, {"plugin", rep.plugin}, {"estimate", rep.estimate},
         {"W2", rep.w2}, {"W2_1", rep.w2_1}, {"ci", {ci.lo(), ci.hi()}}, {"clips", rep.clips.total()}};
  for (std::size_t i = 0; i < rep.if_jj.size(); ++i) j["if_jj"].push_back(rep.if_jj[i]);
  res.json = j.dump(2);
  return res;
}

inline StudyResult run_study(const StudyConfig& c, const Frame* data = nullptr) {
  if (c.study == "rates" || c.study == "coverage") return run_replications(c);
  if (c.study == "variance-scaling") return run_variance_scaling(c);
  if (c.study == "oracle-bias") return run_oracle_bias(c);
  if (c.study == "estimate") return run_estimate(c, data);
  throw config_error("unknown study '" + c.study + "'");
}

}  // namespace hoif::harness
