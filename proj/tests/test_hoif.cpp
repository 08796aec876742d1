#include "hoif/hoif.hpp"
#include "hoif/harness/dgp.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace hoif;

namespace {

Vec jitter(const Vec& v, std::mt19937_64& rng, double s) {
  std::uniform_real_distribution<double> U(-s, s);
  Vec o = v;
  for (long i = 0; i < o.size(); ++i) o(i) += U(rng);
  return o;
}

struct Setup {
  DiscreteDGP law;
  DRFunctional fn;
  DiscreteTruth truth;
  NuisanceEstimate nu;
  DiscreteBasis db;
  TruncatedMoments tm;
};

Setup make_setup(const std::string& name, std::uint64_t seed, double bs, double ps, double gs, int L = 2) {
  std::mt19937_64 rng(seed * 7 + 1);
  Setup s{harness::random_discrete_law(name, 16, seed), functional_by_name(name), {}, {}, {}, {}};
  s.truth = discrete_truth(s.fn, s.law);
  Vec bh = jitter(s.truth.b, rng, bs), ph = jitter(s.truth.p, rng, ps);
  if (name == "2a") ph = ph.cwiseMax(1.05);
  Vec gh = (s.truth.g.array() * (1.0 + gs * jitter(Vec::Zero(16), rng, 1.0).array())).matrix();
  s.nu = support_nuisances(s.law, bh, ph, gh);
  s.db = discrete_basis(make_tensor_basis(Family::haar_father, 1, L), s.law, s.fn, s.nu);
  s.tm = truncated_moments(s.law, s.fn, s.nu, s.db);
  return s;
}

double rel(double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); }

}  // namespace

TEST(Hoif, ExactBiasMatchesClosedForm) {
  for (std::string n : {"1a", "1b", "2a", "4"}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto s = make_setup(n, seed, 0.3, 0.3, 0.4);
      auto ex = expected_components(s.law, s.fn, s.nu, s.db, 4);
      EXPECT_NEAR(ex.plugin - s.tm.psi_tilde, s.tm.u.dot(inv_sym(s.tm.Sigma) * s.tm.v), 1e-10);
      double acc = ex.plugin;
      for (int m = 2; m <= 4; ++m) {
        acc += ex.if_jj[std::size_t(m - 2)];
        EXPECT_NEAR(acc - s.tm.psi_tilde, eb_closed_form(s.tm, m), 1e-10) << n << " m=" << m;
      }
    }
  }
}

TEST(Hoif, NoEstimationBiasWithExactG) {
  auto s = make_setup("1b", 4, 0.3, 0.3, 0.0);
  EXPECT_LT((s.tm.Sigma - Mat::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
  auto ex = expected_components(s.law, s.fn, s.nu, s.db, 3);
  EXPECT_NEAR(ex.plugin + ex.if_jj[0] - s.tm.psi_tilde, 0.0, 1e-12);
  EXPECT_NEAR(ex.total() - s.tm.psi_tilde, 0.0, 1e-12);
}

TEST(Hoif, ModifiedBiasAndRobustness) {
  for (int m = 3; m <= 4; ++m) {
    auto s = make_setup("1a", 5, 0.3, 0.3, 0.4);
    std::mt19937_64 rng(12);
    std::vector<Mat> aux;
    for (int t = 3; t <= m; ++t) {
      Vec galt = (s.truth.g.array() * (1.0 + 0.5 * jitter(Vec::Zero(16), rng, 1.0).array())).matrix();
      aux.push_back(aux_moment(s.law, s.db, galt));
    }
    auto ex = expected_components(s.law, s.fn, s.nu, s.db, m, &aux);
    EXPECT_NEAR(ex.total() - s.tm.psi_tilde, mod_bias_closed_form(s.tm, m, aux), 1e-10) << m;
    // each auxiliary moment exact on its own kills the bias
    for (int t = 3; t <= m; ++t) {
      auto a2 = aux;
      a2[std::size_t(t - 3)] = s.tm.Sigma;
      auto e2 = expected_components(s.law, s.fn, s.nu, s.db, m, &a2);
      EXPECT_NEAR(e2.total() - s.tm.psi_tilde, 0.0, 1e-10) << m << " " << t;
    }
    // and so does g-hat = g, b-hat = b, p-hat = p
    for (auto [bs, ps, gs] : {std::tuple{0.3, 0.3, 0.0}, {0.0, 0.3, 0.4}, {0.3, 0.0, 0.4}}) {
      auto s2 = make_setup("1a", 5, bs, ps, gs);
      auto e2 = expected_components(s2.law, s2.fn, s2.nu, s2.db, m, &aux);
      EXPECT_NEAR(e2.total() - s2.tm.psi_tilde, 0.0, 1e-10);
    }
  }
}

TEST(Hoif, EstimatorComponentsAndErrors) {
  auto law = harness::random_discrete_law("1b", 8, 3);
  auto f = harness::sample_discrete(law, 60, 2);
  auto sp = split_frame(f);
  auto fn = example_1b();
  FitConfig cfg;
  cfg.b_level = cfg.p_level = cfg.g_level = 2;
  auto nu = fit_nuisances(sp.train, fn, cfg);
  nu.train_tag = 77;
  auto spec = make_tensor_basis(Family::haar_father, 1, 3);
  auto wb = weighted_basis(spec, fn, nu);
  auto in = make_input(sp.est, fn, nu, wb);
  auto r1 = estimate_psi_mk(in, "1b", 1, 8);
  EXPECT_DOUBLE_EQ(r1.estimate, in.r.plugin.mean());
  auto r3 = estimate_psi_mk(in, "1b", 3, 8);
  ASSERT_EQ(r3.if_jj.size(), 2u);
  EXPECT_DOUBLE_EQ(r3.estimate, r3.component_sum());
  EXPECT_NEAR(r3.if_jj[0], -chain_u(in, 2, 0, 8), 1e-15);
  EXPECT_NEAR(r3.if_jj[1], chain_u(in, 3, 0, 8), 1e-15);
  // the structured Haar route gives the same numbers
  auto inh = make_input(sp.est, fn, nu, FeatureMap::of(haar_weighted_features(sp.est, 3, false, fn, nu)));
  auto r3h = estimate_psi_mk(inh, "1b", 3, 8);
  EXPECT_LT(rel(r3h.estimate, r3.estimate), 1e-6);
  EXPECT_THROW(estimate_psi_mk(in, "1b", 3, 9), config_error);
  auto other = wb;
  other.train_tag = 5;
  EXPECT_THROW(make_input(sp.est, fn, nu, other), config_error);
  Frame tiny = sp.est.slice(0, 2);
  auto ti = make_input(tiny, fn, nu, wb);
  EXPECT_THROW(estimate_psi_mk(ti, "1b", 3, 4), arity_error);
}

TEST(Hoif, PlannerFixtures) {
  HolderConfig c{0.125, 0.125, 0.25, 1};
  auto e = check_rate_eligibility(c);
  EXPECT_NEAR(e.threshold, 1.0 / 22.0, 1e-12);
  EXPECT_TRUE(e.eligible);
  HolderConfig low{0.125, 0.125, 0.04, 1};
  EXPECT_FALSE(check_rate_eligibility(low).eligible);
  EXPECT_EQ(eq_m(c), 2);

  HolderConfig half{0.5, 0.5, 0.5, 1};
  auto p = plan_mk(half, 1e4, true);
  EXPECT_EQ(p.m, 2);
  EXPECT_EQ(p.k, 100);
  EXPECT_NEAR(p.rate_exp, -0.5, 1e-9);
  HolderConfig eighth{0.125, 0.125, 0.5, 1};
  auto q = plan_mk(eighth, 1e4, true);
  EXPECT_NEAR(q.kappa, 4.0 / 3.0, 1e-9);
  EXPECT_NEAR(q.rate_exp, -1.0 / 3.0, 1e-9);
  EXPECT_LE(2 * q.tb_exp, 2 * q.se_exp + 1e-9);
  // g unknown: above a quarter the root-n rate is reached
  auto r = plan_mk(HolderConfig{0.3, 0.3, 0.5, 1}, 1e4, false);
  EXPECT_NEAR(r.rate_exp, -0.5, 1e-9);
  EXPECT_LE(2 * r.eb_exp, 2 * r.se_exp + 1e-9);
  EXPECT_THROW(plan_mk(HolderConfig{0.3, 0.3, 0.5, 0}, 1e4, false), config_error);
}

TEST(Hoif, KGridFixture) {
  HolderConfig c{0.125, 0.125, 0.25, 1};
  double n = 64;
  auto g = build_kgrid(c, n);
  EXPECT_EQ(g.J, 0);
  EXPECT_NEAR(g.cstar, 1.0, 1e-12);
  EXPECT_NEAR(g.q, 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(g.exp_at(-1), 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(g.exp_at(0), 1.0, 1e-12);
  EXPECT_NEAR(g.exp_at(1), 7.0 / 6.0, 1e-12);
  EXPECT_NEAR(g.exp_at(2), 7.0 / 6.0, 1e-12);
  EXPECT_EQ(g.at(-1), 256);
  EXPECT_EQ(g.at(0), 64);
  EXPECT_EQ(g.at(1), 128);
  EXPECT_EQ(g.at(2), 128);
  EXPECT_EQ(g.m, 3);
  auto rects = omega_rects(g);
  ASSERT_EQ(rects.size(), 3u);
  // rectangles are disjoint
  std::set<std::pair<long, long>> seen;
  long cells = 0;
  for (auto& r : rects)
    for (long a = r.p_lo; a < r.p_hi; ++a)
      for (long b = r.b_lo; b < r.b_hi; ++b) {
        seen.insert({a, b});
        ++cells;
      }
  EXPECT_EQ(long(seen.size()), cells);
  EXPECT_THROW(build_kgrid(HolderConfig{0.125, 0.125, 0.04, 1}, n), config_error);
  // a deeper grid for a rougher g
  auto g2 = build_kgrid(HolderConfig{0.1, 0.14, 0.3, 1}, 1e3);
  for (int s = 0; s <= g2.J; ++s) EXPECT_LT(g2.at(2 * s), g2.at(2 * s - 1));
}

TEST(Hoif, EffMatchesBruteAndAltForm) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> N(0, 1);
  long n = 9, K = 12;
  Mat Z(n, K);
  Vec e(n), d(n), c(n);
  for (long i = 0; i < n; ++i) {
    e(i) = N(rng), d(i) = N(rng), c(i) = N(rng);
    for (long j = 0; j < K; ++j) Z(i, j) = N(rng);
  }
  EstimationInput in;
  in.est.y = Vec::Zero(n);
  in.est.a = Vec::Zero(n);
  in.est.x = RowMat::Zero(n, 1);
  in.r = {e, d, c, Vec::Ones(n)};
  in.Z = FeatureMap::of(Z);
  KGrid g;
  g.J = 1;
  g.m = 4;
  g.k = {12, 4, 10, 6, 8, 7};  // k_{-1}, k_0, k_1, k_2, k_3, k_4
  auto rects = omega_rects(g);
  // independent oracle: sum over the index set with identity on the diagonal
  double brute = 0.0;
  long cnt = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < n; ++l) {
        if (i == j || j == l || i == l) continue;
        double h = 0.0;
        for (auto& r : rects)
          for (long a = r.p_lo; a < r.p_hi; ++a)
            for (long b = r.b_lo; b < r.b_hi; ++b)
              h += e(i) * Z(i, a) * (c(j) * Z(j, a) * Z(j, b) - (a == b ? 1.0 : 0.0)) * Z(l, b) * d(l);
        brute += h;
        ++cnt;
      }
  brute /= double(cnt);
  EXPECT_LT(rel(u3_omega(in, rects), brute), 1e-9);
  auto rep = estimate_psi_eff(in, "x", g);
  EXPECT_DOUBLE_EQ(rep.estimate, rep.component_sum());
  EXPECT_LT(rel(rep.estimate, estimate_psi_eff_alt(in, g)), 1e-9);
  g.k[3] = 4;  // k_2 = k_0 leaves an empty segment
  EXPECT_THROW(estimate_psi_eff(in, "x", g), config_error);
}

TEST(Hoif, Baselines) {
  Frame f;
  f.x = RowMat(5, 1);
  f.x << 0.9, 0.1, 0.5, 0.2, 0.6;
  f.y = Vec(5);
  f.y << 1, 2, 3, 4, 5;
  f.a = Vec(5);
  f.a << 0, 1, 1, 0, 1;
  bool dropped = false;
  // sorted order 0.1,0.2,0.5,0.6,(0.9): pairs (2,4,...) -> (y,a) = (2,1),(4,0) and (3,1),(5,1)
  double want = ((2 - 4) * (1 - 0) + (3 - 5) * (1 - 1)) / 4.0;
  EXPECT_DOUBLE_EQ(baseline_difference_estimator(f, &dropped), want);
  EXPECT_TRUE(dropped);
  // subcube variance with one cube holding everything
  Frame g = f;
  g.y << 1, 1, 1, 1, 1;
  EXPECT_DOUBLE_EQ(baseline_subcube_variance(g, 1, 3), 0.0);
  EXPECT_THROW(baseline_subcube_variance(g, 0, 3), config_error);
  EXPECT_EQ(baseline_subcube_variance(f, 2, 9), baseline_subcube_variance(f, 2, 9));
}
