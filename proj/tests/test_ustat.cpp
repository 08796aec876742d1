#include "hoif/ustat.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hoif;

namespace {

struct Rand {
  std::mt19937_64 rng;
  explicit Rand(std::uint64_t s) : rng(s) {}
  Vec vec(long n) {
    std::normal_distribution<double> N(0, 1);
    Vec v(n);
    for (long i = 0; i < n; ++i) v(i) = N(rng);
    return v;
  }
  Mat mat(long n, long k) {
    std::normal_distribution<double> N(0, 1);
    Mat m(n, k);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < k; ++j) m(i, j) = N(rng);
    return m;
  }
};

double rel(double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); }

}  // namespace

TEST(Ustat, BruteBasics) {
  std::vector<double> d{1, 2, 3};
  GenericKernel mean{1, [&](const int* i) { return d[std::size_t(i[0])]; }};
  EXPECT_DOUBLE_EQ(ustat_brute(mean, 3), 2.0);
  std::vector<double> e{1, 2};
  GenericKernel prod{2, [&](const int* i) { return e[std::size_t(i[0])] * e[std::size_t(i[1])]; }};
  EXPECT_DOUBLE_EQ(ustat_brute(prod, 2), 2.0);
  GenericKernel asym{2, [&](const int* i) { return e[std::size_t(i[0])] - 3 * e[std::size_t(i[1])]; }};
  GenericKernel swp{2, [&](const int* i) { return e[std::size_t(i[1])] - 3 * e[std::size_t(i[0])]; }};
  EXPECT_DOUBLE_EQ(ustat_brute(asym, 2), ustat_brute(swp, 2));
  EXPECT_THROW(ustat_brute(prod, 1), arity_error);
}

TEST(Ustat, ChainMatchesBruteStandard) {
  Rand r(11);
  for (int j = 2; j <= 4; ++j)
    for (long n : {8L, 10L})
      for (long k : {3L, 4L}) {
        auto Z = FeatureMap::of(r.mat(n, k));
        auto s = standard_chain(j, r.vec(n), r.vec(n), r.vec(n), Z, 0, k);
        double a = ustat_chain(s), b = ustat_brute(as_generic(s), n);
        EXPECT_LT(rel(a, b), 1e-9) << j << " " << n << " " << k;
      }
}

TEST(Ustat, ChainMatchesBruteSegments) {
  Rand r(12);
  long n = 9, k = 6;
  auto Z = FeatureMap::of(r.mat(n, k));
  auto W = FeatureMap::of(r.mat(n, k));
  ChainSpec s = standard_chain(4, r.vec(n), r.vec(n), r.vec(n), Z, 0, k);
  s.edges[0].lo = 1; s.edges[0].hi = 5;
  s.edges[1].lo = 2; s.edges[1].hi = 6;
  s.edges[2].lo = 0; s.edges[2].hi = 3;
  s.edges[2].out = W;
  EXPECT_LT(rel(ustat_chain(s), ustat_brute(as_generic(s), n)), 1e-9);
  // rank-one middle without identity
  s.minus_identity[1] = 0;
  EXPECT_LT(rel(ustat_chain(s), ustat_brute(as_generic(s), n)), 1e-9);
}

TEST(Ustat, ChainHaarStructured) {
  Rand r(13);
  long n = 10;
  std::mt19937_64 g(2);
  std::uniform_real_distribution<double> U(0, 1);
  Vec x(n);
  for (long i = 0; i < n; ++i) x(i) = U(g);
  std::vector<double> cm{0.5, 1.2, 0.9, 1.1, 1.3, 0.7, 1.0, 1.3};
  for (bool mra : {true, false}) {
    auto H = FeatureMap::of(make_haar_features(x, 3, mra, cm));
    ChainSpec s = standard_chain(3, r.vec(n), r.vec(n), r.vec(n), H, 0, 8);
    for (auto [lo, hi] : {std::pair<long, long>{0, 8}, {0, 3}, {2, 7}, {3, 5}, {1, 2}}) {
      for (auto& e : s.edges) {
        e.lo = lo;
        e.hi = hi;
      }
      s.edges[0].lo = 0;
      EXPECT_LT(rel(ustat_chain(s), ustat_brute(as_generic(s), n)), 1e-9) << mra << lo << hi;
    }
  }
}

TEST(Ustat, ChainZeroResidual) {
  Rand r(14);
  auto Z = FeatureMap::of(r.mat(8, 3));
  auto s = standard_chain(3, Vec::Zero(8), r.vec(8), r.vec(8), Z, 0, 3);
  EXPECT_EQ(ustat_chain(s), 0.0);
}

TEST(Ustat, ChainPermutationInvariant) {
  Rand r(15);
  long n = 9, k = 3;
  Mat Zm = r.mat(n, k);
  Vec e = r.vec(n), d = r.vec(n), c = r.vec(n);
  double a = ustat_chain(standard_chain(4, e, d, c, FeatureMap::of(Zm), 0, k));
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), r.rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> P(n);
  for (long i = 0; i < n; ++i) P.indices()(i) = p[std::size_t(i)];
  double b = ustat_chain(standard_chain(4, P * e, P * d, P * c, FeatureMap::of(Mat(P * Zm)), 0, k));
  EXPECT_LT(rel(a, b), 1e-12);
}

TEST(Ustat, ChainExpectationMatchesEnumeration) {
  // rows are support outcomes; E over an iid product law
  Rand r(16);
  long G = 4, k = 2;
  Vec p(G);
  p << 0.1, 0.2, 0.3, 0.4;
  auto Z = FeatureMap::of(r.mat(G, k));
  auto s = standard_chain(3, r.vec(G), r.vec(G), r.vec(G), Z, 0, k);
  double brute = 0.0;
  for (int a = 0; a < G; ++a)
    for (int b = 0; b < G; ++b)
      for (int c = 0; c < G; ++c) {
        int idx[3] = {a, b, c};
        brute += p(a) * p(b) * p(c) * chain_kernel_direct(s, idx);
      }
  EXPECT_NEAR(chain_expectation(s, p), brute, 1e-12);
}

TEST(Ustat, DegenerateProjection) {
  FiniteLaw law{{0.2, 0.5, 0.3}};
  std::vector<double> o{1.0, 2.0, -1.0};
  std::vector<double> f{0.3, -1.0, 2.0}, g{1.5, 0.2, -0.7};
  GenericKernel k1{1, [&](const int* i) { return o[std::size_t(i[0])]; }};
  auto d1 = degenerate_project(k1, law);
  double mu = 0.2 * 1 + 0.5 * 2 - 0.3;
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(d1.f(&s), o[std::size_t(s)] - mu, 1e-14);
  GenericKernel fo{2, [&](const int* i) { return f[std::size_t(i[0])]; }};
  auto d0 = degenerate_project(fo, law);
  GenericKernel pr{2, [&](const int* i) { return f[std::size_t(i[0])] * g[std::size_t(i[1])]; }};
  auto dp = degenerate_project(pr, law);
  double Ef = 0, Eg = 0;
  for (int s = 0; s < 3; ++s) {
    Ef += law.prob[std::size_t(s)] * f[std::size_t(s)];
    Eg += law.prob[std::size_t(s)] * g[std::size_t(s)];
  }
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      int idx[2] = {a, b};
      EXPECT_NEAR(d0.f(idx), 0.0, 1e-14);
      EXPECT_NEAR(dp.f(idx), (f[std::size_t(a)] - Ef) * (g[std::size_t(b)] - Eg), 1e-14);
    }
  // order 3 random kernel: every conditional mean vanishes
  Rand r(17);
  Mat T = r.mat(9, 3);
  GenericKernel k3{3, [&](const int* i) { return T(i[0] * 3 + i[1], i[2]) * (1 + i[0]); }};
  auto d3 = degenerate_project(k3, law);
  for (int pos = 0; pos < 3; ++pos)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        int fixed[3] = {a, b, 0};
        if (pos == 0) fixed[0] = 0, fixed[1] = a, fixed[2] = b;
        if (pos == 1) fixed[0] = a, fixed[1] = 0, fixed[2] = b;
        EXPECT_NEAR(conditional_mean(d3, law, pos, fixed), 0.0, 1e-12);
      }
  EXPECT_THROW(degenerate_project(k1, FiniteLaw{}), domain_error);
}

TEST(Ustat, VarianceJ2) {
  Rand r(18);
  long n = 10, k = 3;
  Mat Zm = r.mat(n, k);
  Vec e = r.vec(n), d = r.vec(n);
  auto s = standard_chain(2, e, d, Vec::Ones(n), FeatureMap::of(Zm), 0, k);
  double direct = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double h = 0.5 * (e(i) * Zm.row(i).dot(Zm.row(j)) * d(j) + e(j) * Zm.row(j).dot(Zm.row(i)) * d(i));
      direct += h * h;
    }
  direct /= double(n * (n - 1));
  direct /= binom(n, 2);
  EXPECT_LT(rel(ustat_variance_j2(s), direct), 1e-9);
  EXPECT_LT(rel(ustat_variance_j2_moments(e, d, Zm), direct), 1e-9);
  auto s3 = standard_chain(2, 3.0 * e, d, Vec::Ones(n), FeatureMap::of(Zm), 0, k);
  EXPECT_LT(rel(ustat_variance_j2(s3), 9 * direct), 1e-9);
  auto s0 = standard_chain(2, Vec::Zero(n), d, Vec::Ones(n), FeatureMap::of(Zm), 0, k);
  EXPECT_EQ(ustat_variance_j2(s0), 0.0);
  EXPECT_THROW(ustat_variance_j2(standard_chain(3, e, d, e, FeatureMap::of(Zm), 0, k)), arity_error);
  // subsample exhaustive equals the exact route
  EXPECT_LT(rel(ustat_variance_subsample(s, 1000, 1), direct), 1e-9);
}

TEST(Ustat, VarianceSubsample) {
  Rand r(19);
  long n = 12, k = 3;
  Mat Zm = r.mat(n, k);
  Vec e = r.vec(n), d = r.vec(n), c = r.vec(n);
  auto s = standard_chain(3, e, d, c, FeatureMap::of(Zm), 0, k);
  // exhaustive oracle through the direct kernel
  double acc = 0.0;
  long cnt = 0;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      for (int t = b + 1; t < n; ++t) {
        int p[3] = {a, b, t};
        std::sort(p, p + 3);
        double h = 0.0;
        do h += chain_kernel_direct(s, p);
        while (std::next_permutation(p, p + 3));
        h /= 6.0;
        acc += h * h;
        ++cnt;
      }
  double exact = acc / double(cnt) / binom(n, 3);
  EXPECT_LT(rel(ustat_variance_subsample(s, 220, 7), exact), 1e-9);
  EXPECT_EQ(ustat_variance_subsample(s, 50, 9), ustat_variance_subsample(s, 50, 9));
  auto s0 = standard_chain(3, Vec::Zero(n), d, c, FeatureMap::of(Zm), 0, k);
  EXPECT_EQ(ustat_variance_subsample(s0, 50, 3), 0.0);
}
