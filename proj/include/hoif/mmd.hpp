#pragma once

#include "hoif/hoif.hpp"

#include <optional>
#include <random>

namespace hoif::mmd {

// ------------------------------------------------------------- observations

//! two-occasion monotone pattern: L1 seen iff r0 = 1, Y seen iff r0 = r1 = 1
struct MonotoneObservation {
  int r0 = 0;
  std::vector<double> l0;
  std::optional<std::vector<double>> l1;
  std::optional<int> r1;
  std::optional<double> y;
};

struct MonotoneFrame {
  std::vector<MonotoneObservation> rows;
  int d0 = 1, d1 = 1;  // d1 counts L1 coordinates only

  long size() const { return long(rows.size()); }

  void validate() const {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& o = rows[i];
      auto bad = [&](const std::string& why) {
        throw domain_error("presence pattern violated at row " + std::to_string(i) + ": " + why);
      };
      if (o.r0 != 0 && o.r0 != 1) bad("r0 must be 0 or 1");
      if (int(o.l0.size()) != d0) bad("l0 has the wrong length");
      if (o.r0 == 1) {
        if (!o.l1 || int(o.l1->size()) != d1) bad("l1 missing or of wrong length with r0 = 1");
        if (!o.r1 || (*o.r1 != 0 && *o.r1 != 1)) bad("r1 missing with r0 = 1");
        if ((*o.r1 == 1) != o.y.has_value()) bad("y present iff r0 = r1 = 1");
      } else if (o.l1 || o.r1 || o.y) {
        bad("l1, r1, y must be absent with r0 = 0");
      }
    }
  }

  MonotoneFrame slice(long lo, long hi) const {
    MonotoneFrame f{{rows.begin() + lo, rows.begin() + hi}, d0, d1};
    return f;
  }
};

//! (l0, l1) concatenated; l1 part zero when absent
inline std::vector<double> joint_point(const MonotoneObservation& o, int d1) {
  std::vector<double> v(o.l0);
  if (o.l1) v.insert(v.end(), o.l1->begin(), o.l1->end());
  else v.insert(v.end(), std::size_t(d1), 0.0);
  return v;
}

// ---------------------------------------------------------------- nuisances

using F0 = std::function<double(const double* l0)>;
using F1 = std::function<double(const double* l0l1)>;

struct MmdNuisances {
  F0 pi0, b0;
  F1 pi1, b1;
  // orthonormalized features: Zbar on L0, Wbar on (L0, L1)
  std::function<Vec(const double* l0)> zbar;
  std::function<Vec(const double* l0l1)> wbar;
  long k0 = 0, k1 = 0;
  double floor0 = 0.01, floor1 = 0.01;
};

//! per-row quantities on the estimation half
struct MmdRows {
  Vec q0;        // R0 / pi0hat
  Vec q01;       // R0 R1 / (pi0hat pi1hat)
  Vec res1;      // q01 (Y - B1hat)
  Vec mid;       // q0 (B1hat - B0hat)
  Vec b0;        // B0hat
  Mat Z, W;      // Wbar rows are 0 where L1 is absent (every weight there carries R0)
};

inline MmdRows mmd_rows(const MonotoneFrame& f, const MmdNuisances& nu) {
  f.validate();
  long n = f.size();
  MmdRows r{Vec(n), Vec(n), Vec(n), Vec(n), Vec(n), Mat(n, nu.k0), Mat::Zero(n, nu.k1)};
  for (long i = 0; i < n; ++i) {
    const auto& o = f.rows[std::size_t(i)];
    double p0 = std::max(nu.floor0, nu.pi0(o.l0.data()));
    double B0 = nu.b0(o.l0.data());
    r.b0(i) = B0;
    r.Z.row(i) = nu.zbar(o.l0.data()).transpose();
    r.q0(i) = o.r0 / p0;
    if (o.r0 == 1) {
      auto jp = joint_point(o, f.d1);
      double p1 = std::max(nu.floor1, nu.pi1(jp.data()));
      double B1 = nu.b1(jp.data());
      r.W.row(i) = nu.wbar(jp.data()).transpose();
      r.q01(i) = *o.r1 / (p0 * p1);
      r.res1(i) = *o.r1 ? r.q01(i) * (*o.y - B1) : 0.0;
      r.mid(i) = r.q0(i) * (B1 - B0);
    } else {
      r.q01(i) = 0.0;
      r.res1(i) = 0.0;
      r.mid(i) = 0.0;
    }
  }
  return r;
}

// ------------------------------------------------------------------ chains

//! W-chain: res1 W^T prod (q01 W W^T - I) W q0 (R1/pi1 - 1)
inline ChainSpec w_chain(const MmdRows& r, int j) {
  Vec right = r.q01 - r.q0;  // q0 (R1/pi1hat - 1)
  return standard_chain(j, r.res1, right, r.q01, FeatureMap::of(r.W), 0, r.W.cols());
}

//! Z-chain: (res1 + mid) Z^T prod (q0 Z Z^T - I) (q0 - 1) Z
inline ChainSpec z_chain(const MmdRows& r, int j) {
  Vec left = r.res1 + r.mid;
  Vec right = r.q0.array() - 1.0;
  return standard_chain(j, left, right, r.q0, FeatureMap::of(r.Z), 0, r.Z.cols());
}

//! crossover t (2 <= t <= j-1): node order i_j, i_{t+1..j-1}, i_1, i_{2..t-1}, i_t
inline ChainSpec cross_chain(const MmdRows& r, int j, int t) {
  auto W = FeatureMap::of(r.W), Z = FeatureMap::of(r.Z);
  long k0 = r.Z.cols(), k1 = r.W.cols();
  ChainSpec s;
  s.w.push_back(r.q01 - r.q0);
  for (int l = t + 1; l <= j - 1; ++l) s.w.push_back(r.q01);
  s.w.push_back(r.res1);  // rank-one W -> Z switch
  for (int l = 2; l <= t - 1; ++l) s.w.push_back(r.q0);
  s.w.push_back(Vec(r.q0.array() - 1.0));
  s.minus_identity.assign(std::size_t(j), 0);
  int nw = j - 1 - t, nz = t - 2;
  for (int p = 1; p <= nw; ++p) s.minus_identity[std::size_t(p)] = 1;
  for (int p = nw + 2; p <= nw + 1 + nz; ++p) s.minus_identity[std::size_t(p)] = 1;
  for (int e = 0; e <= nw; ++e) s.edges.push_back({W, W, 0, k1, 1});
  for (int e = 0; e <= nz; ++e) s.edges.push_back({Z, Z, 0, k0, 0});
  return s;
}

struct MmdBrackets {
  double w = 0.0, cross = 0.0, z = 0.0;  // unsigned bracket U-statistics
};

inline MmdBrackets brackets(const MmdRows& r, int j) {
  MmdBrackets b;
  b.w = ustat_chain(w_chain(r, j));
  for (int t = 2; t <= j - 1; ++t) b.cross += ustat_chain(cross_chain(r, j, t));
  b.z = ustat_chain(z_chain(r, j));
  return b;
}

//! psi-hat_m = mean[res1 + mid + B0hat] + sum_j (-1)^{j-1}(W + sum_t cross_t + Z)
inline EstimateReport estimate_mmd_mean(const MonotoneFrame& est, const MmdNuisances& nu, int m) {
  if (m < 1 || m > 4) throw config_error("monotone estimator supports 1 <= m <= 4");
  if (est.size() < m) throw arity_error("estimation half has fewer than m rows");
  MmdRows r = mmd_rows(est, nu);
  EstimateReport rep;
  rep.functional = "mmd";
  rep.m = m;
  rep.k = nu.k0;
  rep.plugin = (r.res1 + r.mid + r.b0).mean();
  for (int j = 2; j <= m; ++j) {
    double sign = (j % 2) ? 1.0 : -1.0;
    auto b = brackets(r, j);
    std::string tag = std::to_string(j);
    rep.blocks.push_back({"W_" + tag, sign * b.w});
    rep.blocks.push_back({"cross_" + tag, sign * b.cross});
    rep.blocks.push_back({"Z_" + tag, sign * b.z});
  }
  rep.estimate = rep.component_sum();
  return rep;
}

// ------------------------------------------------------------ discrete laws

struct L1Branch {
  std::vector<double> l1;
  double prob;
  double pi1;
  std::vector<std::pair<double, double>> y;  // (value, prob) given (l0, l1)
};

struct L0Point {
  std::vector<double> l0;
  double mass;
  double pi0;
  std::vector<L1Branch> branches;
};

struct MonotoneDGP {
  std::vector<L0Point> pts;
  int d0 = 1, d1 = 1;

  struct Enumerated {
    MonotoneFrame rows;
    Vec prob;
  };

  //! every observable outcome with its probability
  Enumerated enumerate() const {
    Enumerated e;
    e.rows.d0 = d0;
    e.rows.d1 = d1;
    std::vector<double> pr;
    for (auto& p : pts) {
      pr.push_back(p.mass * (1.0 - p.pi0));
      e.rows.rows.push_back({0, p.l0, std::nullopt, std::nullopt, std::nullopt});
      for (auto& b : p.branches) {
        pr.push_back(p.mass * p.pi0 * b.prob * (1.0 - b.pi1));
        e.rows.rows.push_back({1, p.l0, b.l1, 0, std::nullopt});
        for (auto& [y, py] : b.y) {
          pr.push_back(p.mass * p.pi0 * b.prob * b.pi1 * py);
          e.rows.rows.push_back({1, p.l0, b.l1, 1, y});
        }
      }
    }
    e.prob = Eigen::Map<Vec>(pr.data(), long(pr.size()));
    return e;
  }

  double psi() const {
    double s = 0.0;
    for (auto& p : pts)
      for (auto& b : p.branches)
        for (auto& [y, py] : b.y) s += p.mass * b.prob * py * y;
    return s;
  }
  double b1(std::size_t g, std::size_t h) const {
    double s = 0.0;
    for (auto& [y, py] : pts[g].branches[h].y) s += py * y;
    return s;
  }
  double b0(std::size_t g) const {
    double s = 0.0;
    for (std::size_t h = 0; h < pts[g].branches.size(); ++h) s += pts[g].branches[h].prob * b1(g, h);
    return s;
  }
  std::pair<std::size_t, std::size_t> locate(const double* l0, const double* l1 = nullptr) const {
    for (std::size_t g = 0; g < pts.size(); ++g) {
      if (!std::equal(pts[g].l0.begin(), pts[g].l0.end(), l0)) continue;
      if (!l1) return {g, 0};
      for (std::size_t h = 0; h < pts[g].branches.size(); ++h)
        if (std::equal(pts[g].branches[h].l1.begin(), pts[g].branches[h].l1.end(), l1)) return {g, h};
    }
    throw domain_error("point is not in the monotone support");
  }
};

//! exact E_theta of psi-hat_1 and of each order-j correction on a finite law
struct MmdExact {
  double psi1 = 0.0;
  std::vector<double> if_jj;  // signed, j = 2..m
  double total() const {
    double s = psi1;
    for (double v : if_jj) s += v;
    return s;
  }
};

inline MmdExact mmd_expected(const MonotoneDGP& law, const MmdNuisances& nu, int m) {
  auto en = law.enumerate();
  MmdRows r = mmd_rows(en.rows, nu);
  MmdExact out;
  out.psi1 = (en.prob.array() * (r.res1 + r.mid + r.b0).array()).sum();
  for (int j = 2; j <= m; ++j) {
    double sign = (j % 2) ? 1.0 : -1.0;
    double v = chain_expectation(w_chain(r, j), en.prob) + chain_expectation(z_chain(r, j), en.prob);
    for (int t = 2; t <= j - 1; ++t) v += chain_expectation(cross_chain(r, j, t), en.prob);
    out.if_jj.push_back(sign * v);
  }
  return out;
}

//! nuisances given as tables on the support of a finite law
struct SupportTables {
  Vec pi0, b0;        // per l0 point
  Vec pi1, b1;        // per (l0, l1) branch, flat order
  Mat phiZ, phiW;     // raw features, rows in the same orders
};

inline long flat_index(const MonotoneDGP& law, std::size_t g, std::size_t h) {
  long o = 0;
  for (std::size_t a = 0; a < g; ++a) o += long(law.pts[a].branches.size());
  return o + long(h);
}

inline long branch_count(const MonotoneDGP& law) { return flat_index(law, law.pts.size(), 0); }

//! truth as tables (raw features left empty)
inline SupportTables true_tables(const MonotoneDGP& law) {
  long G = long(law.pts.size()), N = branch_count(law);
  SupportTables t{Vec(G), Vec(G), Vec(N), Vec(N), {}, {}};
  for (std::size_t g = 0; g < law.pts.size(); ++g) {
    t.pi0(long(g)) = law.pts[g].pi0;
    t.b0(long(g)) = law.b0(g);
    for (std::size_t h = 0; h < law.pts[g].branches.size(); ++h) {
      t.pi1(flat_index(law, g, h)) = law.pts[g].branches[h].pi1;
      t.b1(flat_index(law, g, h)) = law.b1(g, h);
    }
  }
  return t;
}

//! features orthonormalized under the law's own moments of R0/pi0hat and R0R1/(pi0hat pi1hat)
inline MmdNuisances support_nuisances(std::shared_ptr<const MonotoneDGP> law, const SupportTables& t) {
  const auto& L = *law;
  long G = long(L.pts.size()), N = branch_count(L);
  if (t.pi0.size() != G || t.b0.size() != G || t.phiZ.rows() != G) throw domain_error("occasion-0 tables mismatch");
  if (t.pi1.size() != N || t.b1.size() != N || t.phiW.rows() != N) throw domain_error("occasion-1 tables mismatch");
  Mat SZ = Mat::Zero(t.phiZ.cols(), t.phiZ.cols()), SW = Mat::Zero(t.phiW.cols(), t.phiW.cols());
  for (std::size_t g = 0; g < L.pts.size(); ++g) {
    const auto& p = L.pts[g];
    Vec z = t.phiZ.row(long(g)).transpose();
    SZ += p.mass * p.pi0 / t.pi0(long(g)) * z * z.transpose();
    for (std::size_t h = 0; h < p.branches.size(); ++h) {
      long f = flat_index(L, g, h);
      Vec w = t.phiW.row(f).transpose();
      double q = p.mass * p.branches[h].prob * p.pi0 * p.branches[h].pi1 / (t.pi0(long(g)) * t.pi1(f));
      SW += q * w * w.transpose();
    }
  }
  auto Z = std::make_shared<Mat>(t.phiZ * inv_sqrt_sym(SZ));
  auto W = std::make_shared<Mat>(t.phiW * inv_sqrt_sym(SW));
  auto tab = std::make_shared<SupportTables>(t);
  int d0 = L.d0;
  MmdNuisances nu;
  nu.pi0 = [law, tab](const double* l0) { return tab->pi0(long(law->locate(l0).first)); };
  nu.b0 = [law, tab](const double* l0) { return tab->b0(long(law->locate(l0).first)); };
  auto fl = [law, d0](const double* x) {
    auto [g, h] = law->locate(x, x + d0);
    return flat_index(*law, g, h);
  };
  nu.pi1 = [tab, fl](const double* x) { return tab->pi1(fl(x)); };
  nu.b1 = [tab, fl](const double* x) { return tab->b1(fl(x)); };
  nu.zbar = [law, Z](const double* l0) { return Vec(Z->row(long(law->locate(l0).first)).transpose()); };
  nu.wbar = [W, fl](const double* x) { return Vec(W->row(fl(x)).transpose()); };
  nu.k0 = Z->cols();
  nu.k1 = W->cols();
  nu.floor0 = nu.floor1 = 0.0;
  return nu;
}

//! random finite monotone law: G points for L0 (scalar, in (0,1)), H branches each, binary Y
inline MonotoneDGP random_monotone_law(int G, int H, std::uint64_t seed, double pi_lo = 0.3) {
  std::mt19937_64 rng(derive_seed(seed, 0x303));
  std::uniform_real_distribution<double> U(0.0, 1.0);
  MonotoneDGP law;
  double tot = 0.0;
  for (int g = 0; g < G; ++g) {
    L0Point p{{(g + 0.5) / G}, 0.2 + U(rng), pi_lo + (1.0 - pi_lo) * U(rng), {}};
    double bt = 0.0;
    for (int h = 0; h < H; ++h) {
      L1Branch b{{(h + 0.5) / H}, 0.2 + U(rng), pi_lo + (1.0 - pi_lo) * U(rng), {}};
      double py = U(rng), y0 = 2.0 * U(rng) - 1.0, y1 = y0 + 0.5 + U(rng);
      b.y = {{y0, 1.0 - py}, {y1, py}};
      bt += b.prob;
      p.branches.push_back(b);
    }
    for (auto& b : p.branches) b.prob /= bt;
    tot += p.mass;
    law.pts.push_back(p);
  }
  for (auto& p : law.pts) p.mass /= tot;
  return law;
}

// ----------------------------------------------------------- cellwise fitting

//! cellwise nuisances on [0,1) x [0,1) (d0 = d1 = 1); features are cell indicators
struct MmdFitConfig {
  int level0 = 2;   // Z cells: 2^level0
  int level1 = 1;   // W cells: 2^level0 x 2^level1
  int fit_level = 3;  // nuisance cells
  double floor = 0.05;
};

inline MmdNuisances fit_mmd_nuisances(const MonotoneFrame& train, const MmdFitConfig& cfg) {
  train.validate();
  if (train.d0 != 1 || train.d1 != 1) throw config_error("cellwise monotone fit needs scalar L0 and L1");
  if (train.size() < 4) throw arity_error("training half too small");
  auto cell = [](double x, int L) {
    long c = long(std::floor(x * double(1L << L)));
    return std::clamp(c, 0L, (1L << L) - 1);
  };
  int F = cfg.fit_level;
  long nc = 1L << F;
  Vec n0 = Vec::Zero(nc), r0s = Vec::Zero(nc);
  Vec n1 = Vec::Zero(nc * nc), r1s = Vec::Zero(nc * nc), ny = Vec::Zero(nc * nc), ys = Vec::Zero(nc * nc);
  double ybar = 0.0, yc = 0.0, r0bar = 0.0, r1bar = 0.0, r1c = 0.0;
  for (auto& o : train.rows) {
    long a = cell(o.l0[0], F);
    n0(a) += 1;
    r0s(a) += o.r0;
    r0bar += o.r0;
    if (o.r0) {
      long b = a * nc + cell((*o.l1)[0], F);
      n1(b) += 1;
      r1s(b) += *o.r1;
      r1bar += *o.r1;
      r1c += 1;
      if (*o.r1) {
        ny(b) += 1;
        ys(b) += *o.y;
        ybar += *o.y;
        yc += 1;
      }
    }
  }
  r0bar /= double(train.size());
  r1bar = r1c > 0 ? r1bar / r1c : 1.0;
  ybar = yc > 0 ? ybar / yc : 0.0;
  auto P0 = std::make_shared<Vec>(Vec(nc)), B0 = std::make_shared<Vec>(Vec(nc));
  auto P1 = std::make_shared<Vec>(Vec(nc * nc)), B1 = std::make_shared<Vec>(Vec(nc * nc));
  for (long a = 0; a < nc; ++a) (*P0)(a) = std::max(cfg.floor, n0(a) > 0 ? r0s(a) / n0(a) : r0bar);
  for (long b = 0; b < nc * nc; ++b) {
    (*P1)(b) = std::max(cfg.floor, n1(b) > 0 ? r1s(b) / n1(b) : r1bar);
    (*B1)(b) = ny(b) > 0 ? ys(b) / ny(b) : ybar;
  }
  // B0: mean of B1hat over the observed L1 values within each L0 cell
  Vec s0 = Vec::Zero(nc), c0 = Vec::Zero(nc);
  for (auto& o : train.rows)
    if (o.r0) {
      long a = cell(o.l0[0], F);
      s0(a) += (*B1)(a * nc + cell((*o.l1)[0], F));
      c0(a) += 1;
    }
  for (long a = 0; a < nc; ++a) (*B0)(a) = c0(a) > 0 ? s0(a) / c0(a) : ybar;

  MmdNuisances nu;
  nu.floor0 = nu.floor1 = cfg.floor;
  nu.pi0 = [P0, cell, F](const double* l) { return (*P0)(cell(l[0], F)); };
  nu.b0 = [B0, cell, F](const double* l) { return (*B0)(cell(l[0], F)); };
  nu.pi1 = [P1, cell, F, nc](const double* l) { return (*P1)(cell(l[0], F) * nc + cell(l[1], F)); };
  nu.b1 = [B1, cell, F, nc](const double* l) { return (*B1)(cell(l[0], F) * nc + cell(l[1], F)); };

  // indicator features scaled by the empirical weighted cell masses
  long k0 = 1L << cfg.level0, k1b = 1L << cfg.level1, k1 = k0 * k1b;
  Vec mz = Vec::Zero(k0), mw = Vec::Zero(k1);
  for (auto& o : train.rows) {
    if (!o.r0) continue;
    double p0 = nu.pi0(o.l0.data());
    mz(cell(o.l0[0], cfg.level0)) += 1.0 / p0;
    if (*o.r1) {
      double x[2] = {o.l0[0], (*o.l1)[0]};
      mw(cell(x[0], cfg.level0) * k1b + cell(x[1], cfg.level1)) += 1.0 / (p0 * nu.pi1(x));
    }
  }
  double n = double(train.size());
  for (long c = 0; c < k0; ++c) mz(c) = mz(c) > 0 ? std::sqrt(n / mz(c)) : 0.0;
  for (long c = 0; c < k1; ++c) mw(c) = mw(c) > 0 ? std::sqrt(n / mw(c)) : 0.0;
  int l0v = cfg.level0, l1v = cfg.level1;
  nu.zbar = [mz, cell, l0v, k0](const double* l) {
    Vec z = Vec::Zero(k0);
    long c = cell(l[0], l0v);
    z(c) = mz(c);
    return z;
  };
  nu.wbar = [mw, cell, l0v, l1v, k1, k1b](const double* l) {
    Vec w = Vec::Zero(k1);
    long c = cell(l[0], l0v) * k1b + cell(l[1], l1v);
    w(c) = mw(c);
    return w;
  };
  nu.k0 = k0;
  nu.k1 = k1;
  return nu;
}

// ------------------------------------------------------------------ planning

struct OccasionExponents {
  double beta_b = 0.5, beta_pi = 0.5, beta_g = 0.5;
  int d = 1;
};

struct MmdPlan {
  int m = 2;
  double kappa0 = 0, kappa1 = 0;
  long k0 = 1, k1 = 1;
  double mse_exp = 0;  // order of n of the worst squared term
  std::vector<std::pair<std::string, double>> terms;  // squared-bias and variance exponents at the optimum
};

namespace detail {

inline double r(double beta, int d) { return beta / (d + 2.0 * beta); }

//! squared-scale exponents of every bias term and of the variance
inline std::vector<std::pair<std::string, double>> mmd_terms(const OccasionExponents& o0, const OccasionExponents& o1,
                                                             int m, double k0, double k1) {
  std::vector<std::pair<std::string, double>> t;
  double d0 = o0.d, d1 = o1.d;
  t.push_back({"EB0", -2 * ((m - 1) * r(o0.beta_g, o0.d) + r(o0.beta_b, o0.d) + r(o0.beta_pi, o0.d))});
  t.push_back({"EB1", -2 * ((m - 1) * r(o1.beta_g, o1.d) + r(o1.beta_b, o1.d) + r(o1.beta_pi, o1.d))});
  for (int j = 2; j <= m; ++j)
    t.push_back({"EBx" + std::to_string(j),
                 -2 * (r(o1.beta_b, o1.d) + (j - 2) * r(o0.beta_g, o0.d) + (m - j) * r(o1.beta_g, o1.d) +
                       r(o0.beta_pi, o0.d) + r(o1.beta_pi, o1.d))});
  t.push_back({"TB0", -2 * k0 * (o0.beta_b + o0.beta_pi) / d0});
  t.push_back({"TB1", -2 * k1 * (o1.beta_b + o1.beta_pi) / d1});
  t.push_back({"TBx", -2 * (k1 * o1.beta_pi / d1 + k0 * o0.beta_pi / d0 + o1.beta_b / (d1 + o1.beta_b))});
  if (m > 2) {
    t.push_back({"TB(m,2)", -2 * k1 * (std::min(o0.beta_pi, o1.beta_b) + o1.beta_pi) / d1});
    t.push_back({"TB(m,3)", -2 * (o1.beta_b / (d1 + o1.beta_b) + (m - 2) * o0.beta_g / (d0 + o0.beta_g) +
                                  o0.beta_pi / (d0 + o0.beta_pi) + k1 * o1.beta_pi / d1)});
  }
  t.push_back({"Var", -1.0 + (m - 1) * std::max(0.0, std::max(k0, k1) - 1.0)});
  return t;
}

}  // namespace detail

//! exponent-grid minimization of the worst squared term over (kappa0, kappa1, m <= 4)
inline MmdPlan plan_k0k1(const OccasionExponents& o0, const OccasionExponents& o1, double n, int steps = 720,
                         double kmax = 3.0) {
  for (auto* o : {&o0, &o1})
    if (!(o->beta_b > 0 && o->beta_pi > 0 && o->beta_g > 0 && o->d >= 1))
      throw config_error("monotone planner needs positive exponents");
  MmdPlan best;
  double best_val = std::numeric_limits<double>::infinity();
  auto key = [](double a, double b) { return std::pair{std::max(a, b), a + b}; };
  for (int m = 2; m <= 4; ++m)
    for (int a = 0; a <= steps; ++a)
      for (int b = 0; b <= steps; ++b) {
        double k0 = kmax * a / steps, k1 = kmax * b / steps;
        double v = -std::numeric_limits<double>::infinity();
        for (auto& [nm, e] : detail::mmd_terms(o0, o1, m, k0, k1)) v = std::max(v, e);
        bool better = v < best_val - 1e-12;
        bool tie = std::abs(v - best_val) <= 1e-12 && m == best.m && key(k0, k1) < key(best.kappa0, best.kappa1);
        if (better || tie) {
          best_val = v;
          best.m = m;
          best.kappa0 = k0;
          best.kappa1 = k1;
        }
      }
  best.mse_exp = best_val;
  best.terms = detail::mmd_terms(o0, o1, best.m, best.kappa0, best.kappa1);
  best.k0 = std::max(1L, long(std::llround(std::pow(n, best.kappa0))));
  best.k1 = std::max(1L, long(std::llround(std::pow(n, best.kappa1))));
  return best;
}

}  // namespace hoif::mmd
