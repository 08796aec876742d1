#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hoif {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

struct domain_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct singular_error : std::runtime_error {
  double min_eigenvalue;
  singular_error(const std::string& what, double ev)
      : std::runtime_error(what), min_eigenvalue(ev) {}
};

struct arity_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! splitmix64 finalizer; used for counter-based sign draws and seed derivation
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(base ^ mix64(a + 0x632be59bd9b4e019ULL)) ^ mix64(b + 0x8cb92ba72f3d8dd7ULL));
}

inline double hash_unit(std::uint64_t key) {
  return double(mix64(key) >> 11) * 0x1.0p-53;
}

// pairwise summation, fixed tree
inline double cascade_sum(const double* v, std::size_t n) {
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  std::size_t h = n / 2;
  return cascade_sum(v, h) + cascade_sum(v + h, n - h);
}

inline double cascade_sum(const Vec& v) { return cascade_sum(v.data(), std::size_t(v.size())); }

inline double cascade_sum(const std::vector<double>& v) { return cascade_sum(v.data(), v.size()); }

//! symmetric inverse square root; below the floor is an error, never a clamp
inline Mat inv_sqrt_sym(const Mat& a, double floor = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
  double mn = es.eigenvalues().minCoeff();
  if (!(mn > floor))
    throw singular_error("moment matrix near singular (min eigenvalue " + std::to_string(mn) + ")", mn);
  Vec d = es.eigenvalues().array().rsqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

inline Mat inv_sym(const Mat& a, double floor = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
  double mn = es.eigenvalues().cwiseAbs().minCoeff();
  if (!(mn > floor))
    throw singular_error("matrix near singular (min |eigenvalue| " + std::to_string(mn) + ")", mn);
  Vec d = es.eigenvalues().cwiseInverse();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

inline double binom(long n, long k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (long i = 1; i <= k; ++i) r = r * double(n - k + i) / double(i);
  return r;
}

// ordinary least squares slope of y on x
inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
  mx /= double(x.size());
  my /= double(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace hoif
