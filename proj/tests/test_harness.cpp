#include "hoif/harness/io.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace hoif;
using namespace hoif::harness;

namespace {

StudyConfig small_rates() {
  StudyConfig c;
  c.study = "rates";
  c.dgp.beta_b = c.dgp.beta_p = 0.5;
  c.dgp.radius = 1.0;
  c.holder.beta_b = c.holder.beta_p = 0.5;
  c.n_grid = {200, 400};
  c.reps = 6;
  c.estimators = {"psi1", "psi_mk"};
  return c;
}

}  // namespace

TEST(Holder, TailEnergyMatchesGridEnergy) {
  HaarFunction f{0.5, amplitude_for(0.5, 12, 1.0), 0.5, 12, 7};
  // energy above level 4, computed on the finest cells
  const int F = 12;
  std::size_t nf = std::size_t(1) << F;
  double r = 0.0;
  for (std::size_t c = 0; c < nf; ++c) {
    double x = (double(c) + 0.5) / double(nf);
    double v = f(x) - f.eval(x, 4);
    r += v * v / double(nf);
  }
  EXPECT_NEAR(r, f.tail_energy(4), 1e-12);
  EXPECT_NEAR(f.sup_dev(), 1.0, 1e-12);
}

TEST(Holder, ProjectionDecayTracksBeta) {
  for (double beta : {0.125, 0.5}) {
    HaarFunction f{0.0, 1.0, beta, 40, 3};
    EXPECT_NEAR(projection_decay_slope(f, 3, 10), -2.0 * beta, 0.05) << beta;
  }
}

TEST(Holder, TruthAgreesWithMonteCarlo) {
  DgpSpec s;
  s.beta_b = s.beta_p = 0.25;
  s.radius = 1.0;
  s.density_level = 3;
  for (std::string fn : {"1a", "2a", "1b"}) {
    s.functional = fn;
    if (fn != "1a") s.radius = 0.35;
    auto law = make_law(s);
    auto f = generate(law, 200000, 11);
    double est = 0.0;
    long n = f.size();
    for (long i = 0; i < n; ++i) {
      const double* x = f.xrow(i);
      if (fn == "1a") est += law.truth.b(x) * law.truth.b(x);
      else if (fn == "2a") est += law.truth.b(x);
      else {
        double pp = law.truth.p(x);
        est += 0.5 * pp * (1 - pp);
      }
    }
    EXPECT_NEAR(est / double(n), law.truth.psi, 5e-3) << fn;
  }
}

TEST(Holder, RejectsBadSpecs) {
  DgpSpec s;
  s.functional = "2a";
  s.radius = 0.8;
  EXPECT_THROW(make_law(s), config_error);
  s.radius = 0.3;
  s.d = 2;
  EXPECT_THROW(make_law(s), config_error);
  s.d = 1;
  s.functional = "9z";
  EXPECT_THROW(make_law(s), config_error);
  EXPECT_THROW(parse_kind("smooth"), config_error);
}

TEST(Pool, IndexOrderAndErrors) {
  auto v = run_indexed<long>(50, 4, [](std::size_t i) { return long(i * i); });
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v[i], long(i * i));
  EXPECT_THROW(run_indexed<int>(10, 3,
                                [](std::size_t i) -> int {
                                  if (i == 5) throw domain_error("x");
                                  return 0;
                                }),
               domain_error);
}

TEST(Studies, ThreadCountDoesNotChangeOutput) {
  auto c = small_rates();
  auto a = run_study(c);
  c.threads = 3;
  auto b = run_study(c);
  EXPECT_EQ(a.csv, b.csv);
  EXPECT_EQ(a.json, b.json);
  EXPECT_EQ(std::count(a.csv.begin(), a.csv.end(), '\n'), 1 + 2 * 2 * 6);
}

TEST(Studies, SpanTruthHasNoTruncationBias) {
  // b = p in the span of 8 cells: psi_2 at k = 8 with g known is unbiased
  StudyConfig c = small_rates();
  c.dgp.kind = "span";
  c.dgp.span_level = 3;
  c.k = 8;
  c.m = 2;
  c.fit_level = 3;
  c.n_grid = {400};
  c.reps = 200;
  c.estimators = {"psi_mk"};
  auto r = run_study(c);
  auto& cell = r.cells.at(0);
  EXPECT_LT(std::abs(cell.bias), 4.0 * cell.sd / std::sqrt(double(cell.count)));
}

TEST(Studies, OracleBiasAllMatch) {
  StudyConfig c;
  c.study = "oracle-bias";
  c.reps = 4;
  c.dgp.kind = "discrete";
  for (std::string fn : {"1a", "1b", "2a"}) {
    c.dgp.functional = fn;
    auto r = run_study(c);
    auto j = json::parse(r.json);
    EXPECT_EQ(j["checks"].get<long>(), 12) << fn;
    EXPECT_EQ(j["matching"].get<long>(), j["checks"].get<long>()) << fn;
  }
}

TEST(Studies, CoverageResponds) {
  auto c = small_rates();
  c.study = "coverage";
  c.estimators = {"psi_mk"};
  c.alpha = 1.0;  // zero-width interval
  auto r = run_study(c);
  for (auto& cell : r.cells) EXPECT_EQ(cell.coverage, 0.0);
}

TEST(Studies, BudgetGuard) {
  auto c = small_rates();
  c.budget = 10.0;
  EXPECT_THROW(run_study(c), budget_error);
}

TEST(Studies, VarianceScalingRows) {
  StudyConfig c;
  c.study = "variance-scaling";
  c.n_grid = {100};
  c.k_grid = {4, 8, 16};
  c.reps = 5;
  auto r = run_study(c);
  EXPECT_EQ(std::count(r.csv.begin(), r.csv.end(), '\n'), 1 + 5 * 3 * 2);
  EXPECT_TRUE(r.slopes.count("IF2"));
  c.k_grid = {4};
  EXPECT_THROW(run_study(c), config_error);
}

TEST(Config, UnknownKeysAreErrors) {
  EXPECT_THROW(parse_config(json::parse(R"({"study":"rates","nn":3})")), config_error);
  EXPECT_THROW(parse_config(json::parse(R"({"dgp":{"radiuss":1}})")), config_error);
  EXPECT_THROW(parse_config(json::parse(R"({"holder":{"beta":1}})")), config_error);
  EXPECT_THROW(parse_config(json::parse(R"({"reps":"many"})")), config_error);
  EXPECT_THROW(parse_config(json::parse(R"({"bias_mode":"huge"})")), config_error);
  auto c = parse_config(json::parse(R"({"study":"coverage","reps":7,"dgp":{"radius":2},"n_grid":[300]})"));
  EXPECT_EQ(c.reps, 7);
  EXPECT_EQ(c.dgp.radius, 2.0);
  EXPECT_EQ(c.n_grid, std::vector<long>{300});
}

TEST(Csv, StandardLayout) {
  std::istringstream ok("y,a,x1\n1.5,0.2,0.25\n0,1,0.75\n");
  auto f = read_standard_csv(ok);
  EXPECT_EQ(f.size(), 2);
  EXPECT_EQ(f.dim(), 1);
  EXPECT_DOUBLE_EQ(f.x(1, 0), 0.75);
  std::istringstream bad_header("a,y,x1\n1,2,3\n");
  EXPECT_THROW(read_standard_csv(bad_header), domain_error);
  std::istringstream missing("y,a,x1\n1,,0.5\n");
  EXPECT_THROW(read_standard_csv(missing), domain_error);
  std::istringstream ragged("y,a,x1\n1,2\n");
  EXPECT_THROW(read_standard_csv(ragged), domain_error);
  std::istringstream text("y,a,x1\n1,2,abc\n");
  EXPECT_THROW(read_standard_csv(text), domain_error);
}

TEST(Csv, MonotoneLayout) {
  std::istringstream ok("r0,l0_1,r1,l1_1,y\n1,0.2,1,0.4,1.0\n1,0.3,0,0.1,\n0,0.6,,,\n");
  auto f = read_monotone_csv(ok);
  ASSERT_EQ(f.rows.size(), 3u);
  EXPECT_TRUE(f.rows[0].y.has_value());
  EXPECT_FALSE(f.rows[1].y.has_value());
  EXPECT_FALSE(f.rows[2].l1.has_value());
  std::istringstream y_without_r1("r0,l0_1,r1,l1_1,y\n1,0.3,0,0.1,2.0\n");
  EXPECT_THROW(read_monotone_csv(y_without_r1), domain_error);
  std::istringstream l1_after_dropout("r0,l0_1,r1,l1_1,y\n0,0.3,0,0.1,\n");
  EXPECT_THROW(read_monotone_csv(l1_after_dropout), domain_error);
  std::istringstream bad_header("r0,l0_1,l1_1,y\n");
  EXPECT_THROW(read_monotone_csv(bad_header), domain_error);
}

TEST(Estimate, SuppliedDataNeedsEstimatedG) {
  auto c = small_rates();
  c.study = "estimate";
  DgpSpec s;
  s.radius = 1.0;
  auto law = make_law(s);
  auto f = generate(law, 400, 5);
  EXPECT_THROW(run_study(c, &f), config_error);
  c.g_known = false;
  auto r = run_study(c, &f);
  auto j = json::parse(r.json);
  EXPECT_TRUE(std::isfinite(j["estimate"].get<double>()));
  EXPECT_NEAR(j["estimate"].get<double>(), law.truth.psi, 1.0);
}
