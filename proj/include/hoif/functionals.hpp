#pragma once

#include "hoif/ustat.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <string>

namespace hoif {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ------------------------------------------------------------ observations

//! i.i.d. rows of (Y, A, X); X is n x d in [0,1]^d
struct Frame {
  Vec y, a;
  RowMat x;

  long size() const { return long(y.size()); }
  int dim() const { return int(x.cols()); }
  const double* xrow(long i) const { return x.row(i).data(); }

  Frame slice(long lo, long hi) const {
    Frame f;
    f.y = y.segment(lo, hi - lo);
    f.a = a.segment(lo, hi - lo);
    f.x = x.middleRows(lo, hi - lo);
    return f;
  }
  Frame permuted(const std::vector<long>& order) const {
    Frame f;
    long n = long(order.size());
    f.y.resize(n);
    f.a.resize(n);
    f.x.resize(n, x.cols());
    for (long i = 0; i < n; ++i) {
      f.y(i) = y(order[std::size_t(i)]);
      f.a(i) = a(order[std::size_t(i)]);
      f.x.row(i) = x.row(order[std::size_t(i)]);
    }
    return f;
  }
};

struct SplitFrame {
  Frame train, est;
};

//! first floor(frac*n) rows train the nuisances, the rest form the estimation half
inline SplitFrame split_frame(const Frame& f, double frac = 0.5) {
  long n = f.size();
  long nt = long(std::floor(frac * double(n)));
  if (nt < 1 || nt >= n) throw config_error("sample split leaves an empty half");
  return {f.slice(0, nt), f.slice(nt, n)};
}

// -------------------------------------------------------------- functionals

using HFn = std::function<double(double y, double a, const double* x)>;
using XFn = std::function<double(const double* x)>;
//! Bdot / Pdot may depend on the fitted values at x
using DotFn = std::function<double(const double* x, double bhat, double phat)>;

struct DRFunctional {
  std::string name;
  HFn H1, H2, H3, H4;
  DotFn bdot, pdot;
  int h1_sign = -1;  // sign of E[H1 | X]
  bool b_equals_p = false;
  std::string b_role, p_role;
  double b_lo = -1e6, b_hi = 1e6, p_lo = -1e6, p_hi = 1e6;

  double H(double y, double a, const double* x, double b, double p) const {
    return H1(y, a, x) * b * p + H2(y, a, x) * b + H3(y, a, x) * p + H4(y, a, x);
  }
};

namespace detail {
inline DotFn constant_dot(double v) {
  return [v](const double*, double, double) { return v; };
}
inline HFn constant_h(double v) {
  return [v](double, double, const double*) { return v; };
}
}  // namespace detail

//! E[b p] with b = E[Y|X], p = E[A|X]
inline DRFunctional example_1a() {
  DRFunctional f;
  f.name = "1a";
  f.H1 = detail::constant_h(-1.0);
  f.H2 = [](double, double a, const double*) { return a; };
  f.H3 = [](double y, double, const double*) { return y; };
  f.H4 = detail::constant_h(0.0);
  f.bdot = detail::constant_dot(1.0);
  f.pdot = detail::constant_dot(-1.0);
  f.h1_sign = -1;
  f.b_role = "E[Y|X]";
  f.p_role = "E[A|X]";
  return f;
}

//! E[b^2], b = E[Y|X]
inline DRFunctional example_1a_sq() {
  DRFunctional f = example_1a();
  f.name = "1a-sq";
  f.H2 = [](double y, double, const double*) { return y; };
  f.b_equals_p = true;
  f.p_role = "E[Y|X]";
  return f;
}

//! E[Cov(Y, A | X)]
inline DRFunctional example_1b() {
  DRFunctional f;
  f.name = "1b";
  f.H1 = detail::constant_h(1.0);
  f.H2 = [](double, double a, const double*) { return -a; };
  f.H3 = [](double y, double, const double*) { return -y; };
  f.H4 = [](double y, double a, const double*) { return a * y; };
  f.bdot = detail::constant_dot(1.0);
  f.pdot = detail::constant_dot(1.0);
  f.h1_sign = 1;
  f.b_role = "E[Y|X]";
  f.p_role = "E[A|X]";
  return f;
}

//! functional 1b applied to Y = Y* - tau A; y holds Y*
inline DRFunctional example_1c(double tau) {
  DRFunctional f = example_1b();
  f.name = "1c";
  f.H3 = [tau](double y, double a, const double*) { return -(y - tau * a); };
  f.H4 = [tau](double y, double a, const double*) { return a * (y - tau * a); };
  f.b_role = "E[Y*-tau A|X]";
  return f;
}

//! marginal mean under MAR; a is the response indicator, p = 1/pi
inline DRFunctional example_2a(double sigma = 0.01) {
  DRFunctional f;
  f.name = "2a";
  f.H1 = [](double, double a, const double*) { return -a; };
  f.H2 = detail::constant_h(1.0);
  f.H3 = [](double y, double a, const double*) { return a * y; };
  f.H4 = detail::constant_h(0.0);
  f.bdot = detail::constant_dot(-1.0);
  f.pdot = [](const double*, double, double phat) { return phat; };
  f.h1_sign = -1;
  f.b_role = "E[Y|A=1,X]";
  f.p_role = "1/pi(X)";
  f.p_lo = 1.0;
  f.p_hi = 1.0 / sigma;
  return f;
}

//! marginal mean under the exponential-tilt MNAR model with known alpha; p = exp(-gamma)
inline DRFunctional example_2b(double alpha) {
  DRFunctional f;
  f.name = "2b";
  f.H1 = [alpha](double y, double a, const double*) { return -std::exp(-alpha * y) * a; };
  f.H2 = [](double, double a, const double*) { return 1.0 - a; };
  f.H3 = [alpha](double y, double a, const double*) { return a * y * std::exp(-alpha * y); };
  f.H4 = [](double y, double a, const double*) { return a * y; };
  f.bdot = detail::constant_dot(-1.0);
  f.pdot = detail::constant_dot(1.0);
  f.h1_sign = -1;
  f.b_role = "E[Y e^{-aY}|A=1,X]/E[e^{-aY}|A=1,X]";
  f.p_role = "exp(-gamma(X))";
  f.p_lo = 0.0;
  return f;
}

//! E[b^2] for the conditional treatment effect in a trial with known pi0(x); Y* = Y
inline DRFunctional example_4(XFn pi0, XFn cfun = nullptr) {
  DRFunctional f;
  f.name = "4";
  auto s2 = [pi0](const double* x) {
    double p = pi0(x);
    return p * (1.0 - p);
  };
  f.H1 = [pi0, s2](double, double a, const double* x) { return 1.0 - 2.0 * a * (a - pi0(x)) / s2(x); };
  f.H2 = [pi0, s2](double y, double a, const double* x) { return (a - pi0(x)) * y / s2(x); };
  f.H3 = f.H2;
  if (cfun)
    f.H4 = [pi0, cfun](double, double a, const double* x) { return cfun(x) * (a - pi0(x)); };
  else
    f.H4 = detail::constant_h(0.0);
  f.bdot = detail::constant_dot(1.0);
  f.pdot = detail::constant_dot(-1.0);
  f.h1_sign = -1;
  f.b_equals_p = true;
  f.b_role = "E[Y|A=1,X]-E[Y|A=0,X]";
  f.p_role = f.b_role;
  return f;
}

//! E[(b - bhat)^2] through the H4 shift; base must have E[H1|X] = -1 and H2 = H3
inline DRFunctional ball_functional(const DRFunctional& base, XFn bhat) {
  if (!(base.name == "1a-sq" || base.name == "4"))
    throw config_error("ball functional needs a base with E[H1|X] = -1 and b = p");
  DRFunctional f = base;
  f.name = base.name + "-ball";
  auto h3 = base.H3, h4 = base.H4;
  f.H4 = [h3, h4, bhat](double y, double a, const double* x) {
    double bh = bhat(x);
    return h4(y, a, x) - 2.0 * bh * h3(y, a, x) + bh * bh;
  };
  return f;
}

inline DRFunctional functional_by_name(const std::string& name, double param = 0.0) {
  if (name == "1a") return example_1a();
  if (name == "1a-sq") return example_1a_sq();
  if (name == "1b") return example_1b();
  if (name == "1c") return example_1c(param);
  if (name == "2a") return example_2a();
  if (name == "2b") return example_2b(param);
  if (name == "4") {
    double p0 = param > 0.0 && param < 1.0 ? param : 0.5;
    return example_4([p0](const double*) { return p0; });
  }
  throw config_error("unknown functional '" + name + "'");
}

// ---------------------------------------------------------------- nuisances

struct ClipCounts {
  long b = 0, p = 0, g = 0;
  long total() const { return b + p + g; }
};

//! fitted b, p and g = E[H1|X] f_X (density, or masses on a discrete support)
struct NuisanceEstimate {
  XFn b, p, g;
  std::uint64_t train_tag = 0;
  int pc_level = -1;  // all three are constant on dyadic cells at this level (d=1), or -1
  ClipCounts clips;
};

//! oracle passthrough
inline NuisanceEstimate wrap_nuisances(XFn b, XFn p, XFn g, std::uint64_t tag = 0) {
  NuisanceEstimate e;
  e.b = std::move(b);
  e.p = std::move(p);
  e.g = std::move(g);
  e.train_tag = tag;
  return e;
}

struct FitConfig {
  Family family = Family::haar_father;
  int b_level = 2, p_level = 2, g_level = 2;  // dyadic level or polynomial degree
  std::vector<int> cv_levels;                   // nonempty: choose b (and p) levels by validation risk
  double cv_frac = 0.5;
  double g_floor_frac = 0.05;
  bool fit_g = true;
};

namespace detail {

inline long cell_index(const double* x, int d, int L) {
  long c = 0;
  for (int a = 0; a < d; ++a) c = (c << L) | long(haar_cell(x[a], L));
  return c;
}

//! cellwise solution of sum H1 beta + H3 = 0 (haar father), overall ratio for empty cells
inline std::vector<double> cell_ratio(const std::vector<long>& cell, const Vec& h1, const Vec& h3, long ncell) {
  std::vector<double> s1(std::size_t(ncell), 0.0), s3(std::size_t(ncell), 0.0);
  for (std::size_t i = 0; i < cell.size(); ++i) {
    s1[std::size_t(cell[i])] += h1(long(i));
    s3[std::size_t(cell[i])] += h3(long(i));
  }
  double t1 = h1.sum(), t3 = h3.sum();
  double overall = std::abs(t1) > 0 ? -t3 / t1 : 0.0;
  std::vector<double> out(static_cast<std::size_t>(ncell));
  for (long c = 0; c < ncell; ++c)
    out[std::size_t(c)] = std::abs(s1[std::size_t(c)]) > 1e-12 ? -s3[std::size_t(c)] / s1[std::size_t(c)] : overall;
  return out;
}

struct SeriesFit {
  BasisSpec spec;
  bool cellwise = false;
  std::vector<double> cellv;
  Vec beta;
  double eval(const double* x) const {
    if (cellwise) return cellv[std::size_t(cell_index(x, spec.d, spec.resolution))];
    Mat pt(1, spec.d);
    for (int a = 0; a < spec.d; ++a) pt(0, a) = x[a];
    return eval_basis(spec, pt).row(0).dot(beta);
  }
};

//! series solution of E[H1 r + Hr | X] = 0 on the span of the basis
inline SeriesFit fit_moment_series(const Frame& f, Family fam, int level, const Vec& h1, const Vec& hr) {
  SeriesFit s;
  s.spec = make_tensor_basis(fam, f.dim(), level, 1);
  if (fam == Family::haar_father) {
    s.cellwise = true;
    std::vector<long> cell(std::size_t(f.size()));
    for (long i = 0; i < f.size(); ++i) cell[std::size_t(i)] = cell_index(f.xrow(i), f.dim(), level);
    s.cellv = cell_ratio(cell, h1, hr, s.spec.k);
    return s;
  }
  Mat phi = eval_basis(s.spec, Mat(f.x));
  Mat A = phi.transpose() * h1.asDiagonal() * phi;
  Vec rhs = -(phi.transpose() * hr);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()));
  double mn = es.eigenvalues().cwiseAbs().minCoeff();
  if (!(mn > 1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff())))
    throw singular_error("degenerate design matrix in nuisance fit", mn);
  s.beta = A.ldlt().solve(rhs);
  return s;
}

inline double clip_count(double v, double lo, double hi, long& counter) {
  if (v < lo) {
    ++counter;
    return lo;
  }
  if (v > hi) {
    ++counter;
    return hi;
  }
  return v;
}

}  // namespace detail

struct HValues {
  Vec h1, h2, h3, h4;
};

inline HValues h_values(const DRFunctional& fn, const Frame& f) {
  long n = f.size();
  HValues h{Vec(n), Vec(n), Vec(n), Vec(n)};
  for (long i = 0; i < n; ++i) {
    const double* x = f.xrow(i);
    h.h1(i) = fn.H1(f.y(i), f.a(i), x);
    h.h2(i) = fn.H2(f.y(i), f.a(i), x);
    h.h3(i) = fn.H3(f.y(i), f.a(i), x);
    h.h4(i) = fn.H4(f.y(i), f.a(i), x);
  }
  return h;
}

//! validation risk of a candidate r for the moment equation E[H1 r + Hr|X] = 0
inline double moment_risk(int h1_sign, const Vec& h1, const Vec& hr, const Vec& r) {
  Vec v = h1.array() * r.array().square() + 2.0 * hr.array() * r.array();
  return double(h1_sign) * v.mean();
}

namespace detail {
inline int cv_select(const Frame& f, const DRFunctional& fn, const FitConfig& cfg, bool for_b) {
  long nt = long(std::floor(cfg.cv_frac * double(f.size())));
  if (nt < 1 || nt >= f.size()) throw config_error("cross-validation split leaves an empty part");
  Frame fit = f.slice(0, nt), val = f.slice(nt, f.size());
  HValues hf = h_values(fn, fit), hv = h_values(fn, val);
  const Vec& rf = for_b ? hf.h3 : hf.h2;
  const Vec& rv = for_b ? hv.h3 : hv.h2;
  int best = cfg.cv_levels.front();
  double best_risk = std::numeric_limits<double>::infinity();
  for (int lev : cfg.cv_levels) {
    SeriesFit s = fit_moment_series(fit, cfg.family, lev, hf.h1, rf);
    Vec r(val.size());
    for (long i = 0; i < val.size(); ++i) r(i) = s.eval(val.xrow(i));
    double risk = moment_risk(fn.h1_sign, hv.h1, rv, r);
    if (risk < best_risk - 1e-15) {
      best_risk = risk;
      best = lev;
    }
  }
  return best;
}
}  // namespace detail

struct FitReport {
  int b_level = 0, p_level = 0, g_level = 0;
};

//! series fits of b and p, histogram g, clipped; haar family gives cellwise ratios
inline NuisanceEstimate fit_nuisances(const Frame& train, const DRFunctional& fn, const FitConfig& cfg,
                                      FitReport* rep = nullptr) {
  if (train.size() < 1) throw domain_error("empty training half");
  int d = train.dim();
  int bl = cfg.b_level, pl = cfg.p_level;
  if (!cfg.cv_levels.empty()) {
    bl = detail::cv_select(train, fn, cfg, true);
    pl = fn.b_equals_p ? bl : detail::cv_select(train, fn, cfg, false);
  }
  HValues h = h_values(fn, train);
  auto bfit = std::make_shared<detail::SeriesFit>(detail::fit_moment_series(train, cfg.family, bl, h.h1, h.h3));
  auto pfit = std::make_shared<detail::SeriesFit>(detail::fit_moment_series(train, cfg.family, pl, h.h1, h.h2));
  NuisanceEstimate e;
  auto clips = std::make_shared<ClipCounts>();
  // clip counts are taken over the training rows once, evaluation clips silently by the same rule
  for (long i = 0; i < train.size(); ++i) {
    detail::clip_count(bfit->eval(train.xrow(i)), fn.b_lo, fn.b_hi, e.clips.b);
    detail::clip_count(pfit->eval(train.xrow(i)), fn.p_lo, fn.p_hi, e.clips.p);
  }
  double blo = fn.b_lo, bhi = fn.b_hi, plo = fn.p_lo, phi = fn.p_hi;
  e.b = [bfit, blo, bhi](const double* x) { return std::clamp(bfit->eval(x), blo, bhi); };
  e.p = [pfit, plo, phi](const double* x) { return std::clamp(pfit->eval(x), plo, phi); };
  int gl = cfg.g_level;
  if (cfg.fit_g) {
    long ncell = 1L << (gl * d);
    std::vector<double> hist(std::size_t(ncell), 0.0);
    for (long i = 0; i < train.size(); ++i) hist[std::size_t(detail::cell_index(train.xrow(i), d, gl))] += h.h1(i);
    double vol = std::ldexp(1.0, -gl * d);
    for (auto& v : hist) v = double(fn.h1_sign) * v / (double(train.size()) * vol);
    std::vector<double> sorted(hist);
    std::nth_element(sorted.begin(), sorted.begin() + long(sorted.size() / 2), sorted.end());
    double floor = cfg.g_floor_frac * sorted[sorted.size() / 2];
    if (!(floor > 0)) floor = 1e-3;
    for (auto& v : hist)
      if (v < floor) {
        v = floor;
        ++e.clips.g;
      }
    for (auto& v : hist) v *= double(fn.h1_sign);
    auto hp = std::make_shared<std::vector<double>>(std::move(hist));
    e.g = [hp, d, gl](const double* x) { return (*hp)[std::size_t(detail::cell_index(x, d, gl))]; };
  }
  if (d == 1 && cfg.family == Family::haar_father) e.pc_level = std::max({bl, pl, gl});
  if (rep) *rep = {bl, pl, gl};
  return e;
}

// ---------------------------------------------------- orthonormalizing weight

//! w(x) = Bdot(x) Pdot(x) ghat(x), the density weight behind Zbar
inline XFn orthonormal_weight(const DRFunctional& fn, const NuisanceEstimate& nu) {
  if (!nu.g) throw config_error("nuisance estimate has no g");
  auto b = nu.b, p = nu.p, g = nu.g;
  auto bd = fn.bdot, pd = fn.pdot;
  return [=](const double* x) {
    double bh = b(x), ph = p(x);
    return bd(x, bh, ph) * pd(x, bh, ph) * g(x);
  };
}

//! level-L cell means of the weight (d = 1); exact for nuisances constant on dyadic cells
inline std::vector<double> weight_cell_means(const DRFunctional& fn, const NuisanceEstimate& nu, int L) {
  XFn w = orthonormal_weight(fn, nu);
  if (nu.pc_level >= 0) {
    int F = std::max(L, nu.pc_level);
    std::size_t nf = std::size_t(1) << F;
    std::vector<double> fine(nf);
    for (std::size_t c = 0; c < nf; ++c) {
      double x = (double(c) + 0.5) / double(nf);
      fine[c] = w(&x);
    }
    return histogram_at_level(fine, F, L);
  }
  return cell_means_of([w](double x) { return w(&x); }, L);
}

//! density-orthonormalized basis (tensor Gauss-Legendre quadrature of the weight)
inline WeightedBasis weighted_basis(const BasisSpec& spec, const DRFunctional& fn, const NuisanceEstimate& nu,
                                    int panels = 0) {
  XFn w = orthonormal_weight(fn, nu);
  WeightedBasis wb = orthonormalize_density(spec, [w](const double* x) { return w(x); }, panels);
  wb.train_tag = nu.train_tag;
  return wb;
}

//! structured d = 1 Haar features for the rows of f
inline HaarFeatures haar_weighted_features(const Frame& f, int L, bool mra, const DRFunctional& fn,
                                           const NuisanceEstimate& nu) {
  if (f.dim() != 1) throw config_error("structured Haar features need d = 1");
  return make_haar_features(f.x.col(0), L, mra, weight_cell_means(fn, nu, L));
}

// ------------------------------------------------------------ residuals

struct Residuals {
  Vec eps, delta, c, plugin;
};

//! eps = (H1 P + H2) Bdot, delta = (H1 B + H3) Pdot, c = Pdot Bdot H1, plugin = H(B, P)
inline Residuals residuals(const DRFunctional& fn, const NuisanceEstimate& nu, const Frame& f) {
  long n = f.size();
  Residuals r{Vec(n), Vec(n), Vec(n), Vec(n)};
  for (long i = 0; i < n; ++i) {
    const double* x = f.xrow(i);
    double y = f.y(i), a = f.a(i);
    double b = nu.b(x), p = nu.p(x);
    double h1 = fn.H1(y, a, x), h2 = fn.H2(y, a, x), h3 = fn.H3(y, a, x), h4 = fn.H4(y, a, x);
    double bd = fn.bdot(x, b, p), pd = fn.pdot(x, b, p);
    r.eps(i) = (h1 * p + h2) * bd;
    r.delta(i) = (h1 * b + h3) * pd;
    r.c(i) = pd * bd * h1;
    r.plugin(i) = h1 * b * p + h2 * b + h3 * p + h4;
  }
  return r;
}

// --------------------------------------------------------- discrete laws

struct Outcome {
  double y, a, prob;
};

//! finite law: support points with masses and finite conditional laws of (Y, A)
struct DiscreteDGP {
  RowMat x;
  Vec mass;
  std::vector<std::vector<Outcome>> cond;

  long points() const { return long(mass.size()); }

  void validate() const {
    if (x.rows() != mass.size() || long(cond.size()) != mass.size()) throw domain_error("discrete law shape mismatch");
    if (std::abs(mass.sum() - 1.0) > 1e-12) throw domain_error("masses must sum to 1");
    for (auto& c : cond) {
      double s = 0.0;
      for (auto& o : c) {
        if (o.prob < 0) throw domain_error("negative conditional probability");
        s += o.prob;
      }
      if (std::abs(s - 1.0) > 1e-12) throw domain_error("conditional law does not sum to 1");
    }
  }

  //! every (point, outcome) pair as an observation row with its probability
  struct Enumerated {
    Frame rows;
    Vec prob;
    std::vector<long> point;
  };
  Enumerated enumerate() const {
    Enumerated e;
    long total = 0;
    for (auto& c : cond) total += long(c.size());
    e.rows.y.resize(total);
    e.rows.a.resize(total);
    e.rows.x.resize(total, x.cols());
    e.prob.resize(total);
    long r = 0;
    for (long g = 0; g < points(); ++g)
      for (auto& o : cond[std::size_t(g)]) {
        e.rows.y(r) = o.y;
        e.rows.a(r) = o.a;
        e.rows.x.row(r) = x.row(g);
        e.prob(r) = mass(g) * o.prob;
        e.point.push_back(g);
        ++r;
      }
    return e;
  }

  long locate(const double* p) const {
    for (long g = 0; g < points(); ++g) {
      bool same = true;
      for (long a = 0; a < x.cols(); ++a) same = same && x(g, a) == p[a];
      if (same) return g;
    }
    throw domain_error("point is not in the discrete support");
  }
};

//! per-point conditional means E[H_r | X = x_g]
struct CondMeans {
  Vec h1, h2, h3, h4;
};

inline CondMeans cond_means(const DRFunctional& fn, const DiscreteDGP& law) {
  long G = law.points();
  CondMeans m{Vec::Zero(G), Vec::Zero(G), Vec::Zero(G), Vec::Zero(G)};
  for (long g = 0; g < G; ++g) {
    const double* x = law.x.row(g).data();
    for (auto& o : law.cond[std::size_t(g)]) {
      m.h1(g) += o.prob * fn.H1(o.y, o.a, x);
      m.h2(g) += o.prob * fn.H2(o.y, o.a, x);
      m.h3(g) += o.prob * fn.H3(o.y, o.a, x);
      m.h4(g) += o.prob * fn.H4(o.y, o.a, x);
    }
  }
  return m;
}

struct DiscreteTruth {
  Vec b, p, g;  // per support point; g = E[H1|x] * mass
  double psi = 0.0;
};

inline DiscreteTruth discrete_truth(const DRFunctional& fn, const DiscreteDGP& law) {
  law.validate();
  CondMeans m = cond_means(fn, law);
  DiscreteTruth t;
  long G = law.points();
  t.b = Vec(G);
  t.p = Vec(G);
  t.g = Vec(G);
  for (long g = 0; g < G; ++g) {
    if (std::abs(m.h1(g)) < 1e-300) throw domain_error("E[H1|X] vanishes at a support point");
    t.b(g) = -m.h3(g) / m.h1(g);
    t.p(g) = -m.h2(g) / m.h1(g);
    t.g(g) = m.h1(g) * law.mass(g);
    t.psi += law.mass(g) * (m.h1(g) * t.b(g) * t.p(g) + m.h2(g) * t.b(g) + m.h3(g) * t.p(g) + m.h4(g));
  }
  return t;
}

//! E_theta[H(b*, p*)] for arbitrary per-point b*, p*
inline double expected_h(const DRFunctional& fn, const DiscreteDGP& law, const Vec& bs, const Vec& ps) {
  CondMeans m = cond_means(fn, law);
  double s = 0.0;
  for (long g = 0; g < law.points(); ++g)
    s += law.mass(g) * (m.h1(g) * bs(g) * ps(g) + m.h2(g) * bs(g) + m.h3(g) * ps(g) + m.h4(g));
  return s;
}

//! nuisances given as values on the support (g as masses)
inline NuisanceEstimate support_nuisances(const DiscreteDGP& law, const Vec& b, const Vec& p, const Vec& g,
                                          std::uint64_t tag = 0) {
  auto L = std::make_shared<DiscreteDGP>(law);
  auto bv = std::make_shared<Vec>(b), pv = std::make_shared<Vec>(p), gv = std::make_shared<Vec>(g);
  return wrap_nuisances([L, bv](const double* x) { return (*bv)(L->locate(x)); },
                        [L, pv](const double* x) { return (*pv)(L->locate(x)); },
                        [L, gv](const double* x) { return (*gv)(L->locate(x)); }, tag);
}

//! Zbar at the support points orthonormalized with weights Bdot Pdot ghat
struct DiscreteBasis {
  WeightedBasis wb;
  Mat phi;   // G x k raw
  Mat Z;     // G x k orthonormalized
  Vec bdot, pdot;
};

inline DiscreteBasis discrete_basis(const BasisSpec& spec, const DiscreteDGP& law, const DRFunctional& fn,
                                    const NuisanceEstimate& nu) {
  long G = law.points();
  DiscreteBasis db;
  db.phi = eval_basis(spec, Mat(law.x));
  db.bdot.resize(G);
  db.pdot.resize(G);
  Vec w(G);
  for (long g = 0; g < G; ++g) {
    const double* x = law.x.row(g).data();
    double b = nu.b(x), p = nu.p(x);
    db.bdot(g) = fn.bdot(x, b, p);
    db.pdot(g) = fn.pdot(x, b, p);
    w(g) = db.bdot(g) * db.pdot(g) * nu.g(x);
  }
  db.wb = orthonormalize(spec, db.phi, w);
  db.wb.train_tag = nu.train_tag;
  db.Z = db.wb.features(db.phi);
  return db;
}

//! exact moments of the truncated problem under the law
struct TruncatedMoments {
  Mat Sigma;  // E[Bdot Pdot H1 Zbar Zbar^T]
  Vec u, v;   // E[Zbar Q^2 (P - Phat)/Pdot], E[Zbar Q^2 (B - Bhat)/Bdot]
  Vec eta, alpha;
  Vec btil, ptil;  // per point
  double psi_tilde = 0.0;
};

inline TruncatedMoments truncated_moments(const DiscreteDGP& law, const DRFunctional& fn, const NuisanceEstimate& nu,
                                          const DiscreteBasis& db) {
  DiscreteTruth tr = discrete_truth(fn, law);
  CondMeans m = cond_means(fn, law);
  long G = law.points(), k = db.Z.cols();
  TruncatedMoments t;
  t.Sigma = Mat::Zero(k, k);
  t.u = Vec::Zero(k);
  t.v = Vec::Zero(k);
  Vec rb = Vec::Zero(k), rp = Vec::Zero(k);
  for (long g = 0; g < G; ++g) {
    const double* x = law.x.row(g).data();
    double bh = nu.b(x), ph = nu.p(x);
    Vec z = db.Z.row(g).transpose();
    double q2 = db.bdot(g) * db.pdot(g) * m.h1(g);
    t.Sigma += law.mass(g) * q2 * z * z.transpose();
    t.u += law.mass(g) * q2 * (tr.p(g) - ph) / db.pdot(g) * z;
    t.v += law.mass(g) * q2 * (tr.b(g) - bh) / db.bdot(g) * z;
    rb += law.mass(g) * db.pdot(g) * (m.h1(g) * bh + m.h3(g)) * z;
    rp += law.mass(g) * db.bdot(g) * (m.h1(g) * ph + m.h2(g)) * z;
  }
  Mat Si = inv_sym(t.Sigma);
  t.eta = -Si * rb;
  t.alpha = -Si * rp;
  t.btil.resize(G);
  t.ptil.resize(G);
  for (long g = 0; g < G; ++g) {
    const double* x = law.x.row(g).data();
    t.btil(g) = nu.b(x) + db.bdot(g) * t.eta.dot(db.Z.row(g));
    t.ptil(g) = nu.p(x) + db.pdot(g) * t.alpha.dot(db.Z.row(g));
  }
  t.psi_tilde = expected_h(fn, law, t.btil, t.ptil);
  return t;
}

//! psi-tilde_k via the closed-form working-model parameters
inline double truncated_parameter_exact(const DiscreteDGP& law, const DRFunctional& fn, const NuisanceEstimate& nu,
                                        const DiscreteBasis& db) {
  return truncated_moments(law, fn, nu, db).psi_tilde;
}

//! TB_k = E[Pi_perp(Q (P - Phat)/Pdot) Pi_perp(Q (B - Bhat)/Bdot)], projections on span(Q Zbar)
inline double truncation_bias_exact(const DiscreteDGP& law, const DRFunctional& fn, const NuisanceEstimate& nu,
                                    const DiscreteBasis& db) {
  DiscreteTruth tr = discrete_truth(fn, law);
  CondMeans m = cond_means(fn, law);
  long G = law.points(), k = db.Z.cols();
  Vec q(G), hp(G), hb(G);
  Mat QZ(G, k);
  for (long g = 0; g < G; ++g) {
    const double* x = law.x.row(g).data();
    double q2 = db.bdot(g) * db.pdot(g) * m.h1(g);
    if (q2 < -1e-14) throw domain_error("Bdot Pdot E[H1|X] is negative at a support point");
    q(g) = std::sqrt(std::max(0.0, q2));
    hp(g) = q(g) * (tr.p(g) - nu.p(x)) / db.pdot(g);
    hb(g) = q(g) * (tr.b(g) - nu.b(x)) / db.bdot(g);
    QZ.row(g) = q(g) * db.Z.row(g);
  }
  const Vec& mu = law.mass;
  Mat S = QZ.transpose() * mu.asDiagonal() * QZ;
  Mat Si = inv_sym(S);
  auto perp = [&](const Vec& h) {
    Vec coef = Si * (QZ.transpose() * (mu.array() * h.array()).matrix());
    return Vec(h - QZ * coef);
  };
  Vec a = perp(hp), b = perp(hb);
  return (mu.array() * a.array() * b.array()).sum();
}

}  // namespace hoif
