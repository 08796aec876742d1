#pragma once

#include "hoif/common.hpp"

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace hoif {

enum class Family { haar_father, daubechies, legendre };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::haar_father: return "haar-father";
    case Family::daubechies: return "daubechies";
    case Family::legendre: return "legendre";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "haar-father" || s == "haar") return Family::haar_father;
  if (s == "daubechies" || s == "daubechies-style") return Family::daubechies;
  if (s == "legendre") return Family::legendre;
  throw config_error("unknown basis family '" + s + "'");
}

struct BasisSpec {
  Family family = Family::haar_father;
  int d = 1;
  int resolution = 0;  // dyadic level L, or max polynomial degree
  int M = 1;           // vanishing moments (daubechies only)
  long axis_size = 1;
  long k = 1;
};

// ---------------------------------------------------------------- quadrature

struct GaussRule {
  std::vector<double> x, w;  // on [0,1]
};

inline GaussRule gauss_legendre(int n) {
  GaussRule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int j = 2; j <= n; ++j) {
        double p2 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    {
      double p0 = 1.0, p1 = z;
      for (int j = 2; j <= n; ++j) {
        double p2 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
    }
    r.x[i] = 0.5 * (1.0 - z);
    r.w[i] = 1.0 / ((1.0 - z * z) * dp * dp);  // 2/((1-z^2)p'^2) scaled by 1/2
  }
  return r;
}

inline const GaussRule& gl64() {
  static const GaussRule r = gauss_legendre(64);
  return r;
}

// ------------------------------------------------------- daubechies tables

namespace detail {

inline std::vector<double> db_filter(int M) {
  switch (M) {
    case 1: return {M_SQRT1_2, M_SQRT1_2};
    case 2: return {0.48296291314469025, 0.836516303737469, 0.22414386804185735, -0.12940952255092145};
    case 3:
      return {0.3326705529509569, 0.8068915093133388, 0.4598775021193313,
              -0.13501102001039084, -0.08544127388224149, 0.035226291882100656};
    case 4:
      return {0.23037781330885523, 0.7148465705525415, 0.6308807679295904, -0.02798376941698385,
              -0.18703481171888114, 0.030841381835986965, 0.032883011666982945, -0.010597401784997278};
  }
  throw config_error("daubechies-style basis supports M in 1..4");
}

struct DbTable {
  int M = 0;
  int R = 0;  // samples per unit = 2^R
  std::vector<double> phi, psi;

  static double lookup(const std::vector<double>& t, int R, double y) {
    double s = std::ldexp(y, R);
    if (s < 0.0 || s >= double(t.size() - 1)) return 0.0;
    auto i = std::size_t(s);
    double f = s - double(i);
    return t[i] * (1.0 - f) + t[i + 1] * f;
  }
  double phi_at(double y) const { return lookup(phi, R, y); }
  double psi_at(double y) const { return lookup(psi, R, y); }
};

// cascade algorithm: exact values on dyadic points, linear interpolation between
inline DbTable build_db_table(int M, int R) {
  auto h = db_filter(M);
  int L = 2 * M;
  int span = L - 1;
  DbTable t;
  t.M = M;
  t.R = R;
  int Rp = R + 1;
  std::size_t np = std::size_t(span) * (std::size_t(1) << Rp) + 1;
  std::vector<double> phi(np, 0.0);
  // integer samples: eigenvector of A_{ab} = sqrt2 h_{2a-b} for eigenvalue 1
  Mat A = Mat::Zero(L, L);
  for (int a = 0; a < L; ++a)
    for (int b = 0; b < L; ++b) {
      int idx = 2 * a - b;
      if (idx >= 0 && idx < L) A(a, b) = M_SQRT2 * h[idx];
    }
  Eigen::JacobiSVD<Mat> svd(A - Mat::Identity(L, L), Eigen::ComputeFullV);
  Vec v = svd.matrixV().col(L - 1);
  v /= v.sum();
  for (int a = 0; a <= span; ++a) phi[std::size_t(a) << Rp] = v(a);
  for (int r = 1; r <= Rp; ++r) {
    std::size_t step = std::size_t(1) << (Rp - r);
    for (std::size_t i = step; i < np; i += 2 * step) {
      // x = i / 2^Rp ; phi(x) = sqrt2 sum_k h_k phi(2x - k)
      double acc = 0.0;
      for (int k = 0; k < L; ++k) {
        long long j = 2 * (long long)i - (long long)k * (1LL << Rp);
        if (j >= 0 && j < (long long)np) acc += h[k] * phi[std::size_t(j)];
      }
      phi[i] = M_SQRT2 * acc;
    }
  }
  std::size_t nr = std::size_t(span) * (std::size_t(1) << R) + 1;
  t.phi.assign(nr, 0.0);
  t.psi.assign(nr, 0.0);
  for (std::size_t i = 0; i < nr; ++i) t.phi[i] = phi[2 * i];
  for (std::size_t i = 0; i < nr; ++i) {
    double acc = 0.0;
    for (int k = 0; k < L; ++k) {
      double g = ((k % 2) ? -1.0 : 1.0) * h[L - 1 - k];
      long long j = 4 * (long long)i - (long long)k * (1LL << Rp);
      if (j >= 0 && j < (long long)np) acc += g * phi[std::size_t(j)];
    }
    t.psi[i] = M_SQRT2 * acc;
  }
  return t;
}

inline const DbTable& db_table(int M) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<DbTable>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& p = cache[M];
  if (!p) p = std::make_unique<DbTable>(build_db_table(M, 14));
  return *p;
}

inline int db_coarsest(int M) {
  int j = 0;
  while ((1 << j) < 2 * M - 1) ++j;
  return j;
}

}  // namespace detail

// ------------------------------------------------------------- basis specs

inline BasisSpec make_tensor_basis(Family family, int d, int resolution, int M = 1, long k_ceiling = 1L << 22) {
  if (d < 1) throw config_error("basis dimension must be >= 1");
  if (resolution < 0) throw config_error("basis resolution must be >= 0");
  BasisSpec s;
  s.family = family;
  s.d = d;
  s.resolution = resolution;
  s.M = M;
  switch (family) {
    case Family::haar_father:
      if (resolution > 30) throw config_error("haar level too large");
      s.axis_size = 1L << resolution;
      break;
    case Family::daubechies:
      if (M < 1) throw config_error("daubechies-style basis requires M >= 1");
      detail::db_filter(M);
      if (resolution < detail::db_coarsest(M))
        throw config_error("daubechies level below the coarsest admissible level");
      if (resolution > 30) throw config_error("daubechies level too large");
      s.axis_size = 1L << resolution;
      break;
    case Family::legendre:
      s.axis_size = resolution + 1;
      break;
  }
  double kk = std::pow(double(s.axis_size), d);
  if (kk > double(k_ceiling))
    throw config_error("basis size " + std::to_string(kk) + " exceeds ceiling " + std::to_string(k_ceiling));
  s.k = long(kk);
  return s;
}

//! one-dimensional evaluation, ordered by (level, translation)
inline void eval_axis(const BasisSpec& s, double x, double* out) {
  switch (s.family) {
    case Family::haar_father: {
      long n = s.axis_size;
      long c = std::min(n - 1, long(x * double(n)));
      for (long i = 0; i < n; ++i) out[i] = 0.0;
      out[c] = std::sqrt(double(n));
      return;
    }
    case Family::legendre: {
      double t = 2.0 * x - 1.0;
      double p0 = 1.0, p1 = t;
      out[0] = 1.0;
      if (s.resolution >= 1) out[1] = std::sqrt(3.0) * t;
      for (int n = 1; n < s.resolution; ++n) {
        double p2 = ((2.0 * n + 1.0) * t * p1 - n * p0) / (n + 1.0);
        p0 = p1;
        p1 = p2;
        out[n + 1] = std::sqrt(2.0 * (n + 1) + 1.0) * p2;
      }
      return;
    }
    case Family::daubechies: {
      int L = s.resolution;
      if (s.M == 1) {
        long n = 1L << L;
        long c = std::min(n - 1, long(x * double(n)));
        out[0] = 1.0;
        for (int l = 0; l < L; ++l) {
          long base = 1L << l;
          for (long t = 0; t < base; ++t) out[base + t] = 0.0;
          long cl = c >> (L - l);
          bool right = (c >> (L - l - 1)) & 1;
          out[base + cl] = std::sqrt(double(base)) * (right ? -1.0 : 1.0);
        }
        return;
      }
      const auto& tab = detail::db_table(s.M);
      int j0 = detail::db_coarsest(s.M);
      int span = 2 * s.M - 1;
      auto periodized = [&](bool wavelet, int j, long t) {
        double scale = std::ldexp(1.0, j);
        double y = scale * x - double(t);
        double acc = 0.0;
        // y + scale*m in [0, span)
        long mlo = long(std::ceil(-y / scale)) - 1;
        long mhi = long(std::floor((double(span) - y) / scale)) + 1;
        for (long m = mlo; m <= mhi; ++m) {
          double z = y + scale * double(m);
          if (z < 0.0 || z >= double(span)) continue;
          acc += wavelet ? tab.psi_at(z) : tab.phi_at(z);
        }
        return std::sqrt(scale) * acc;
      };
      long idx = 0;
      for (long t = 0; t < (1L << j0); ++t) out[idx++] = periodized(false, j0, t);
      for (int j = j0; j < L; ++j)
        for (long t = 0; t < (1L << j); ++t) out[idx++] = periodized(true, j, t);
      return;
    }
  }
}

inline Mat eval_basis(const BasisSpec& s, const Mat& points) {
  if (points.cols() != s.d)
    throw domain_error("point dimension " + std::to_string(points.cols()) + " != basis dimension " +
                       std::to_string(s.d));
  Mat out(points.rows(), s.k);
  std::vector<std::vector<double>> ax(s.d, std::vector<double>(s.axis_size));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (int a = 0; a < s.d; ++a) {
      double x = points(i, a);
      if (!(x >= 0.0 && x <= 1.0))
        throw domain_error("coordinate " + std::to_string(x) + " outside [0,1] in row " + std::to_string(i));
      eval_axis(s, x, ax[a].data());
    }
    for (long c = 0; c < s.k; ++c) {
      long rem = c;
      double v = 1.0;
      for (int a = s.d - 1; a >= 0; --a) {
        v *= ax[a][std::size_t(rem % s.axis_size)];
        rem /= s.axis_size;
      }
      out(i, c) = v;
    }
  }
  return out;
}

// ---------------------------------------------------------- weighted basis

struct WeightedBasis {
  BasisSpec spec;
  Mat T;       // (E[q^2 phi phi^T])^{-1/2}
  Mat moment;  // E[q^2 phi phi^T]
  std::uint64_t train_tag = 0;

  Mat features(const Mat& phi) const { return phi * T; }
  Mat features_at(const Mat& points) const { return eval_basis(spec, points) * T; }
};

//! per-row weights: moment = sum_i w_i phi_i phi_i^T (w_i carries q^2 and the row mass)
inline WeightedBasis orthonormalize(const BasisSpec& s, const Mat& phi, const Vec& w, double floor = 1e-10) {
  if (phi.rows() != w.size()) throw domain_error("weight length does not match basis rows");
  WeightedBasis wb;
  wb.spec = s;
  wb.moment = phi.transpose() * w.asDiagonal() * phi;
  wb.T = inv_sqrt_sym(wb.moment, floor);
  return wb;
}

//! weight function against Lebesgue measure; tensor Gauss-Legendre, 64 nodes per panel per axis
//! panels <= 0 picks one panel per dyadic cell for wavelet families
inline Mat density_moment(const BasisSpec& s, const std::function<double(const double*)>& w, int panels = 0) {
  if (panels <= 0) panels = s.family == Family::legendre ? 1 : int(s.axis_size);
  const auto& g = gl64();
  long q = long(g.x.size()) * panels;
  std::vector<double> nodes(q), wts(q);
  for (int p = 0; p < panels; ++p)
    for (std::size_t j = 0; j < g.x.size(); ++j) {
      nodes[p * g.x.size() + j] = (p + g.x[j]) / panels;
      wts[p * g.x.size() + j] = g.w[j] / panels;
    }
  long total = 1;
  for (int a = 0; a < s.d; ++a) total *= q;
  Mat acc = Mat::Zero(s.k, s.k);
  const long chunk = 4096;
  Mat pts(std::min(chunk, total), s.d);
  Vec ww(std::min(chunk, total));
  for (long start = 0; start < total; start += chunk) {
    long m = std::min(chunk, total - start);
    pts.conservativeResize(m, s.d);
    ww.conservativeResize(m);
    for (long r = 0; r < m; ++r) {
      long rem = start + r;
      double wt = 1.0;
      for (int a = s.d - 1; a >= 0; --a) {
        long ia = rem % q;
        rem /= q;
        pts(r, a) = nodes[ia];
        wt *= wts[ia];
      }
      ww(r) = wt * w(pts.row(r).data());
    }
    Mat phi = eval_basis(s, pts);
    acc.noalias() += phi.transpose() * ww.asDiagonal() * phi;
  }
  return acc;
}

inline WeightedBasis orthonormalize_density(const BasisSpec& s, const std::function<double(const double*)>& w,
                                            int panels = 0, double floor = 1e-10) {
  WeightedBasis wb;
  wb.spec = s;
  wb.moment = density_moment(s, w, panels);
  wb.T = inv_sqrt_sym(wb.moment, floor);
  return wb;
}

//! fitted values of the projection of h on span(q Zbar) under row masses mu
inline Vec project(const WeightedBasis& wb, const Mat& phi, const Vec& q, const Vec& mu, const Vec& h) {
  Mat Z = wb.features(phi);
  Vec coef = Z.transpose() * (mu.array() * q.array() * h.array()).matrix();
  return (q.array() * (Z * coef).array()).matrix();
}

// -------------------------------------------------- structured haar features

//! d=1 Haar system at level L after density orthonormalization: Zbar(x) = amp * e_cell in the
//! father coordinates, or amp * H[:,cell] in the multiresolution coordinates (orthogonal rotation)
struct HaarFeatures {
  int L = 0;
  bool mra = true;
  std::vector<std::uint32_t> cell;
  Vec amp;

  long dim() const { return 1L << L; }
  long rows() const { return long(cell.size()); }

  Vec dense_row(long i) const {
    long K = dim();
    Vec r = Vec::Zero(K);
    long c = cell[std::size_t(i)];
    if (!mra) {
      r(c) = amp(i);
      return r;
    }
    r(0) = amp(i) * std::pow(2.0, -0.5 * L);
    for (int l = 0; l < L; ++l) {
      long u = c >> (L - l);
      bool right = (c >> (L - l - 1)) & 1;
      r((1L << l) + u) = amp(i) * std::pow(2.0, 0.5 * (l - L)) * (right ? -1.0 : 1.0);
    }
    return r;
  }
};

inline std::uint32_t haar_cell(double x, int L) {
  long n = 1L << L;
  if (!(x >= 0.0 && x <= 1.0)) throw domain_error("coordinate " + std::to_string(x) + " outside [0,1]");
  return std::uint32_t(std::min(n - 1, long(x * double(n))));
}

//! cell_mean[c] = 2^L * integral of the weight over cell c (length 2^L); empty -> unit weight
inline HaarFeatures make_haar_features(const Vec& x, int L, bool mra, const std::vector<double>& cell_mean = {},
                                       double floor = 1e-10) {
  HaarFeatures f;
  f.L = L;
  f.mra = mra;
  f.cell.resize(std::size_t(x.size()));
  f.amp.resize(x.size());
  double root = std::pow(2.0, 0.5 * L);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    try {
      f.cell[std::size_t(i)] = haar_cell(x(i), L);
    } catch (const domain_error&) {
      throw domain_error("coordinate " + std::to_string(x(i)) + " outside [0,1] in row " + std::to_string(i));
    }
    double m = cell_mean.empty() ? 1.0 : cell_mean[f.cell[std::size_t(i)]];
    if (!(m > floor)) throw singular_error("haar cell weight below floor", m);
    f.amp(i) = root / std::sqrt(m);
  }
  return f;
}

//! refine or coarsen a histogram on level Lh to level L (cell means)
inline std::vector<double> histogram_at_level(const std::vector<double>& hist, int Lh, int L) {
  std::vector<double> out(std::size_t(1) << L);
  if (L >= Lh) {
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = hist[c >> (L - Lh)];
  } else {
    std::size_t f = std::size_t(1) << (Lh - L);
    for (std::size_t c = 0; c < out.size(); ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < f; ++j) s += hist[c * f + j];
      out[c] = s / double(f);
    }
  }
  return out;
}

inline std::vector<double> cell_means_of(const std::function<double(double)>& w, int L) {
  const auto& g = gl64();
  std::size_t n = std::size_t(1) << L;
  std::vector<double> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < g.x.size(); ++j) s += g.w[j] * w((double(c) + g.x[j]) / double(n));
    out[c] = s;
  }
  return out;
}

}  // namespace hoif
