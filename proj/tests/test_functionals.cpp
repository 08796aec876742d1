#include "hoif/functionals.hpp"
#include "hoif/harness/dgp.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hoif;

namespace {

const char* kNames[] = {"1a", "1a-sq", "1b", "1c", "2a", "2b", "4"};

DRFunctional named(const std::string& n) {
  if (n == "1c") return example_1c(0.7);
  if (n == "2b") return example_2b(0.8);
  return functional_by_name(n);
}

//! per-point conditional moments read straight off the law
struct Raw {
  Vec EY, EA, EAY, EY_A1, EY_A0, pi, tilt_num, tilt_den;
};

Raw raw_moments(const DiscreteDGP& law, double alpha) {
  long G = law.points();
  Raw r{Vec::Zero(G), Vec::Zero(G), Vec::Zero(G), Vec::Zero(G), Vec::Zero(G), Vec::Zero(G), Vec::Zero(G),
        Vec::Zero(G)};
  for (long g = 0; g < G; ++g) {
    double m1 = 0, m0 = 0;
    for (auto& o : law.cond[std::size_t(g)]) {
      r.EY(g) += o.prob * o.y;
      r.EA(g) += o.prob * o.a;
      r.EAY(g) += o.prob * o.a * o.y;
      if (o.a == 1.0) {
        r.EY_A1(g) += o.prob * o.y;
        m1 += o.prob;
        r.tilt_num(g) += o.prob * o.y * std::exp(-alpha * o.y);
        r.tilt_den(g) += o.prob * std::exp(-alpha * o.y);
      } else {
        r.EY_A0(g) += o.prob * o.y;
        m0 += o.prob;
      }
    }
    r.pi(g) = m1;
    if (m1 > 0) r.EY_A1(g) /= m1;
    if (m0 > 0) r.EY_A0(g) /= m0;
  }
  return r;
}

Vec jitter(const Vec& v, std::mt19937_64& rng, double s) {
  std::uniform_real_distribution<double> U(-s, s);
  Vec o = v;
  for (long i = 0; i < o.size(); ++i) o(i) += U(rng);
  return o;
}

}  // namespace

TEST(Functionals, TruthMatchesDirectMoments) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (std::string n : kNames) {
      auto law = harness::random_discrete_law(n, 8, seed);
      auto fn = named(n);
      auto t = discrete_truth(fn, law);
      Raw r = raw_moments(law, 0.8);
      const Vec& m = law.mass;
      if (n == "1a") {
        EXPECT_LT((t.b - r.EY).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((t.p - r.EA).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(t.psi, (m.array() * r.EY.array() * r.EA.array()).sum(), 1e-12);
      } else if (n == "1a-sq") {
        EXPECT_NEAR(t.psi, (m.array() * r.EY.array().square()).sum(), 1e-12);
      } else if (n == "1b") {
        EXPECT_NEAR(t.psi, (m.array() * (r.EAY - r.EY.cwiseProduct(r.EA)).array()).sum(), 1e-12);
      } else if (n == "1c") {
        // E[Cov(Y* - tau A, A | X)]
        double cov = 0.0;
        for (long g = 0; g < law.points(); ++g) {
          double ea2 = 0.0;
          for (auto& o : law.cond[std::size_t(g)]) ea2 += o.prob * o.a * o.a;
          double vA = ea2 - r.EA(g) * r.EA(g);
          cov += m(g) * (r.EAY(g) - r.EY(g) * r.EA(g) - 0.7 * vA);
        }
        EXPECT_NEAR(t.psi, cov, 1e-12);
      } else if (n == "2a") {
        EXPECT_LT((t.b - r.EY_A1).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((t.p - r.pi.cwiseInverse()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(t.psi, (m.array() * r.EY_A1.array()).sum(), 1e-12);
      } else if (n == "2b") {
        Vec b = r.tilt_num.cwiseQuotient(r.tilt_den);
        EXPECT_LT((t.b - b).cwiseAbs().maxCoeff(), 1e-12);
        Vec p = (Vec::Ones(law.points()) - r.pi).cwiseQuotient(r.tilt_den);
        EXPECT_LT((t.p - p).cwiseAbs().maxCoeff(), 1e-12);
        double psi = (m.array() * (r.EAY.array() + (1.0 - r.pi.array()) * b.array())).sum();
        EXPECT_NEAR(t.psi, psi, 1e-12);
      } else if (n == "4") {
        Vec cate = r.EY_A1 - r.EY_A0;
        EXPECT_LT((t.b - cate).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((t.p - cate).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(t.psi, (m.array() * cate.array().square()).sum(), 1e-12);
      }
    }
  }
}

TEST(Functionals, SignOfH1AndDots) {
  for (std::string n : kNames) {
    auto law = harness::random_discrete_law(n, 8, 3);
    auto fn = named(n);
    auto cm = cond_means(fn, law);
    for (long g = 0; g < law.points(); ++g) {
      EXPECT_GT(double(fn.h1_sign) * cm.h1(g), 0.0) << n;
      const double* x = law.x.row(g).data();
      double q2 = fn.bdot(x, 0.3, 1.5) * fn.pdot(x, 0.3, 1.5) * cm.h1(g);
      EXPECT_GT(q2, 0.0) << n;
    }
  }
}

TEST(Functionals, MixedBiasAndDoubleRobustness) {
  std::mt19937_64 rng(21);
  for (std::string n : kNames) {
    auto law = harness::random_discrete_law(n, 8, 9);
    auto fn = named(n);
    auto t = discrete_truth(fn, law);
    auto cm = cond_means(fn, law);
    Vec bh = jitter(t.b, rng, 0.3), ph = jitter(t.p, rng, 0.3);
    EXPECT_NEAR(expected_h(fn, law, t.b, ph), t.psi, 1e-12) << n;
    EXPECT_NEAR(expected_h(fn, law, bh, t.p), t.psi, 1e-12) << n;
    double mixed = (law.mass.array() * cm.h1.array() * (bh - t.b).array() * (ph - t.p).array()).sum();
    EXPECT_NEAR(expected_h(fn, law, bh, ph) - t.psi, mixed, 1e-12) << n;
  }
}

TEST(Functionals, BallFunctional) {
  std::mt19937_64 rng(4);
  for (std::string n : {"1a-sq", "4"}) {
    auto law = harness::random_discrete_law(n, 8, 5);
    auto base = named(n);
    auto t = discrete_truth(base, law);
    Vec c = jitter(t.b, rng, 0.5);
    auto L = std::make_shared<DiscreteDGP>(law);
    auto fn = ball_functional(base, [L, c](const double* x) { return c(L->locate(x)); });
    auto tb = discrete_truth(fn, law);
    EXPECT_NEAR(tb.psi, (law.mass.array() * (t.b - c).array().square()).sum(), 1e-12) << n;
  }
  EXPECT_THROW(ball_functional(example_1b(), [](const double*) { return 0.0; }), config_error);
  EXPECT_THROW(functional_by_name("nope"), config_error);
}

TEST(Functionals, TruncatedParameterAndTB) {
  std::mt19937_64 rng(31);
  auto spec = make_tensor_basis(Family::haar_father, 1, 2);
  for (std::string n : kNames) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      auto law = harness::random_discrete_law(n, 16, seed);
      auto fn = named(n);
      auto t = discrete_truth(fn, law);
      Vec bh = jitter(t.b, rng, 0.3), ph = jitter(t.p, rng, 0.3);
      if (n == "2a") ph = ph.cwiseMax(1.05);
      Vec gh = (t.g.array() * (1.0 + 0.4 * jitter(Vec::Zero(16), rng, 1.0).array())).matrix();
      auto nu = support_nuisances(law, bh, ph, gh);
      auto db = discrete_basis(spec, law, fn, nu);
      auto tm = truncated_moments(law, fn, nu, db);
      double tb = truncation_bias_exact(law, fn, nu, db);
      EXPECT_NEAR(tm.psi_tilde - t.psi, tb, 1e-10) << n << " " << seed;
      // working-model residual moments vanish
      auto cm = cond_means(fn, law);
      Vec mb = Vec::Zero(db.Z.cols());
      for (long g = 0; g < 16; ++g)
        mb += law.mass(g) * db.pdot(g) * (cm.h1(g) * tm.btil(g) + cm.h3(g)) * db.Z.row(g).transpose();
      EXPECT_LT(mb.cwiseAbs().maxCoeff(), 1e-10);
      // b-hat = b leaves nothing to project
      auto nu_b = support_nuisances(law, t.b, ph, gh);
      auto db_b = discrete_basis(spec, law, fn, nu_b);
      EXPECT_NEAR(truncated_parameter_exact(law, fn, nu_b, db_b), t.psi, 1e-10) << n;
    }
  }
}

TEST(Functionals, TruncationVanishesInSpan) {
  // b - bhat constant on level-2 cells lies in the span of the level-2 Haar father
  std::mt19937_64 rng(8);
  auto law = harness::random_discrete_law("1a", 16, 2);
  auto fn = example_1a();
  auto t = discrete_truth(fn, law);
  Vec shift(4);
  shift << 0.2, -0.1, 0.3, 0.05;
  Vec bh = t.b, ph = jitter(t.p, rng, 0.3);
  for (long g = 0; g < 16; ++g) bh(g) -= shift(g / 4);
  auto nu = support_nuisances(law, bh, ph, t.g);
  auto db = discrete_basis(make_tensor_basis(Family::haar_father, 1, 2), law, fn, nu);
  EXPECT_NEAR(truncation_bias_exact(law, fn, nu, db), 0.0, 1e-12);
  EXPECT_NEAR(truncated_parameter_exact(law, fn, nu, db), t.psi, 1e-12);
  // g-hat = g makes Sigma the identity
  auto tm = truncated_moments(law, fn, nu, db);
  EXPECT_LT((tm.Sigma - Mat::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Functionals, ResidualForms) {
  auto law = harness::random_discrete_law("2a", 8, 4);
  auto f = harness::sample_discrete(law, 50, 1);
  auto fn = example_2a();
  auto nu = wrap_nuisances([](const double* x) { return x[0] - 0.2; }, [](const double* x) { return 1.5 + x[0]; },
                           [](const double*) { return -1.0; });
  auto r = residuals(fn, nu, f);
  for (long i = 0; i < f.size(); ++i) {
    double x = f.x(i, 0), b = x - 0.2, p = 1.5 + x, a = f.a(i), y = f.y(i);
    EXPECT_NEAR(r.eps(i), a * p - 1.0, 1e-14);
    EXPECT_NEAR(r.delta(i), a * p * (y - b), 1e-14);
    EXPECT_NEAR(r.c(i), a * p, 1e-14);
    EXPECT_NEAR(r.plugin(i), b + a * p * (y - b), 1e-14);
  }
  auto fa = example_1a();
  auto ra = residuals(fa, nu, f);
  for (long i = 0; i < f.size(); ++i) {
    double x = f.x(i, 0);
    EXPECT_NEAR(ra.eps(i), f.a(i) - (1.5 + x), 1e-14);
    EXPECT_NEAR(ra.delta(i), (x - 0.2) - f.y(i), 1e-14);
  }
}

TEST(Functionals, FitRecoversCellTruth) {
  auto law = harness::random_discrete_law("1a", 4, 6);
  auto fn = example_1a();
  auto t = discrete_truth(fn, law);
  auto f = harness::sample_discrete(law, 40000, 2);
  FitConfig cfg;
  cfg.b_level = cfg.p_level = cfg.g_level = 2;
  auto nu = fit_nuisances(f, fn, cfg);
  for (long g = 0; g < 4; ++g) {
    const double* x = law.x.row(g).data();
    EXPECT_NEAR(nu.b(x), t.b(g), 0.03);
    EXPECT_NEAR(nu.p(x), t.p(g), 0.03);
    EXPECT_NEAR(nu.g(x), t.g(g) * 4.0, 0.1);  // density on cells of width 1/4
  }
  EXPECT_EQ(nu.pc_level, 2);
  // legendre series on the same data: normal equations solved
  cfg.family = Family::legendre;
  cfg.b_level = cfg.p_level = 3;
  auto nl = fit_nuisances(f, fn, cfg);
  EXPECT_TRUE(std::isfinite(nl.b(law.x.row(0).data())));
  EXPECT_EQ(nl.pc_level, -1);
}

TEST(Functionals, CrossValidationSmoke) {
  auto law = harness::random_discrete_law("1b", 8, 7);
  auto f = harness::sample_discrete(law, 4000, 3);
  FitConfig cfg;
  cfg.cv_levels = {0, 1, 2, 3};
  FitReport rep;
  auto nu = fit_nuisances(f, example_1b(), cfg, &rep);
  EXPECT_GE(rep.b_level, 0);
  EXPECT_LE(rep.b_level, 3);
  // eight distinct support cells need level 3 once n is large
  EXPECT_EQ(rep.b_level, 3);
  EXPECT_TRUE(std::isfinite(nu.b(law.x.row(0).data())));
}

TEST(Functionals, SplitAndClip) {
  auto law = harness::random_discrete_law("2a", 8, 1);
  auto f = harness::sample_discrete(law, 11, 1);
  auto s = split_frame(f);
  EXPECT_EQ(s.train.size(), 5);
  EXPECT_EQ(s.est.size(), 6);
  EXPECT_THROW(split_frame(f, 0.0), config_error);
  auto big = harness::sample_discrete(law, 400, 1);
  auto fn = example_2a(0.5);
  FitConfig cfg;
  cfg.b_level = cfg.p_level = cfg.g_level = 3;
  auto nu = fit_nuisances(big, fn, cfg);
  for (long g = 0; g < 8; ++g) {
    double p = nu.p(law.x.row(g).data());
    EXPECT_GE(p, 1.0);
    EXPECT_LE(p, 2.0);
  }
}
