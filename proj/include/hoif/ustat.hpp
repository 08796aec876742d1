#pragma once

#include "hoif/basis.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

namespace hoif {

// ----------------------------------------------------------- generic kernels

struct GenericKernel {
  int m = 1;
  std::function<double(const int*)> f;  // ordered m-tuple of row indices
};

//! (n-m)!/n! times the sum over ordered distinct m-tuples
inline double ustat_brute(const GenericKernel& b, long n) {
  int m = b.m;
  if (n < m) throw arity_error("ustat_brute: n < m");
  std::vector<int> idx(m, 0);
  std::vector<char> used(std::size_t(n), 0);
  double total = 0.0;
  long count = 0;
  std::function<void(int)> rec = [&](int pos) {
    if (pos == m) {
      total += b.f(idx.data());
      ++count;
      return;
    }
    for (int i = 0; i < n; ++i) {
      if (used[std::size_t(i)]) continue;
      used[std::size_t(i)] = 1;
      idx[std::size_t(pos)] = i;
      rec(pos + 1);
      used[std::size_t(i)] = 0;
    }
  };
  rec(0);
  return total / double(count);
}

//! finite-support law over outcome labels 0..S-1
struct FiniteLaw {
  std::vector<double> prob;
  std::size_t size() const { return prob.size(); }
};

namespace detail {
// E over the positions not flagged in `keep`, others fixed to o
inline double partial_expectation(const GenericKernel& b, const FiniteLaw& law, const int* o, unsigned keep) {
  std::vector<int> idx(o, o + b.m);
  std::vector<int> freep;
  for (int p = 0; p < b.m; ++p)
    if (!(keep >> p & 1u)) freep.push_back(p);
  double acc = 0.0;
  std::function<void(std::size_t, double)> rec = [&](std::size_t q, double pr) {
    if (q == freep.size()) {
      acc += pr * b.f(idx.data());
      return;
    }
    for (std::size_t s = 0; s < law.size(); ++s) {
      if (law.prob[s] == 0.0) continue;
      idx[std::size_t(freep[q])] = int(s);
      rec(q + 1, pr * law.prob[s]);
    }
  };
  rec(0, 1.0);
  return acc;
}
}  // namespace detail

//! Hoeffding degenerate part of an order-m kernel under a finite law
inline GenericKernel degenerate_project(const GenericKernel& b, const FiniteLaw& law) {
  if (law.size() == 0) throw domain_error("degenerate_project needs a finite, nonempty support");
  GenericKernel out;
  out.m = b.m;
  out.f = [b, law](const int* o) {
    int m = b.m;
    double acc = 0.0;
    for (unsigned S = 0; S < (1u << m); ++S) {
      int t = __builtin_popcount(S);
      double sign = ((m - t) % 2) ? -1.0 : 1.0;
      acc += sign * detail::partial_expectation(b, law, o, S);
    }
    return acc;
  };
  return out;
}

//! exact E[b | all arguments except `free_pos`]
inline double conditional_mean(const GenericKernel& b, const FiniteLaw& law, int free_pos, const int* fixed) {
  unsigned keep = ((1u << b.m) - 1u) & ~(1u << free_pos);
  return detail::partial_expectation(b, law, fixed, keep);
}

// --------------------------------------------------------------- features

//! per-observation feature rows in one coordinate system
struct FeatureMap {
  std::shared_ptr<const Mat> dense;
  std::shared_ptr<const HaarFeatures> haar;

  static FeatureMap of(Mat m) {
    FeatureMap f;
    f.dense = std::make_shared<const Mat>(std::move(m));
    return f;
  }
  static FeatureMap of(HaarFeatures h) {
    FeatureMap f;
    f.haar = std::make_shared<const HaarFeatures>(std::move(h));
    return f;
  }
  long rows() const { return dense ? long(dense->rows()) : haar->rows(); }
  long dim() const { return dense ? long(dense->cols()) : haar->dim(); }
  Vec row(long i) const { return dense ? Vec(dense->row(i).transpose()) : haar->dense_row(i); }
  const void* id() const { return dense ? static_cast<const void*>(dense.get()) : static_cast<const void*>(haar.get()); }
  Mat to_dense(long limit = 1L << 14) const {
    if (dense) return *dense;
    if (dim() > limit) throw config_error("structured features too wide to densify");
    Mat m(rows(), dim());
    for (long i = 0; i < rows(); ++i) m.row(i) = haar->dense_row(i).transpose();
    return m;
  }
};

namespace detail {

inline void emit_groups(std::vector<std::pair<std::uint64_t, int>>& keyed, const Vec& amp,
                        const std::vector<double>& weight, std::vector<Eigen::Triplet<double>>& trip) {
  std::sort(keyed.begin(), keyed.end());
  std::size_t s = 0;
  while (s < keyed.size()) {
    std::size_t e = s;
    while (e < keyed.size() && keyed[e].first == keyed[s].first) ++e;
    for (std::size_t a = s; a < e; ++a)
      for (std::size_t b = s; b < e; ++b) {
        int i = keyed[a].second, ip = keyed[b].second;
        trip.emplace_back(i, ip, weight[std::size_t(i)] * amp(i) * amp(ip));
      }
    s = e;
  }
}

// K_{[0,g)} for the multiresolution coordinates
inline SpMat haar_prefix_gram(const HaarFeatures& f, long g) {
  long n = f.rows();
  SpMat out(n, n);
  if (g <= 0) return out;
  int L = f.L;
  std::vector<std::pair<std::uint64_t, int>> keyed;
  std::vector<double> weight(static_cast<std::size_t>(n));
  keyed.reserve(std::size_t(n));
  if (g >= f.dim()) {
    for (long i = 0; i < n; ++i) {
      keyed.emplace_back(std::uint64_t(f.cell[std::size_t(i)]), int(i));
      weight[std::size_t(i)] = 1.0;
    }
  } else {
    int l = 0;
    while ((2L << l) <= g) ++l;
    long t = g - (1L << l);
    for (long i = 0; i < n; ++i) {
      std::uint64_t c = f.cell[std::size_t(i)];
      std::uint64_t u = c >> (L - l);
      if (long(u) < t) {
        keyed.emplace_back((std::uint64_t(1) << 63) | (c >> (L - l - 1)), int(i));
        weight[std::size_t(i)] = std::ldexp(1.0, l + 1 - L);
      } else {
        keyed.emplace_back(u, int(i));
        weight[std::size_t(i)] = std::ldexp(1.0, l - L);
      }
    }
  }
  std::vector<Eigen::Triplet<double>> trip;
  emit_groups(keyed, f.amp, weight, trip);
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

inline SpMat haar_gram(const HaarFeatures& f, long lo, long hi) {
  long n = f.rows();
  if (!f.mra) {
    std::vector<std::pair<std::uint64_t, int>> keyed;
    std::vector<double> weight(std::size_t(n), 1.0);
    for (long i = 0; i < n; ++i) {
      long c = f.cell[std::size_t(i)];
      if (c >= lo && c < hi) keyed.emplace_back(std::uint64_t(c), int(i));
    }
    std::vector<Eigen::Triplet<double>> trip;
    emit_groups(keyed, f.amp, weight, trip);
    SpMat out(n, n);
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
  }
  SpMat a = haar_prefix_gram(f, hi);
  if (lo <= 0) return a;
  SpMat b = haar_prefix_gram(f, lo);
  SpMat d = a - b;
  return d.pruned(0.0, 1e-300);
}

}  // namespace detail

//! G(i,i') = out(i)[lo,hi) . in(i')[lo,hi)
inline SpMat gram(const FeatureMap& out, const FeatureMap& in, long lo, long hi) {
  long n = out.rows();
  if (in.rows() != n) throw domain_error("gram: feature row counts differ");
  if (lo < 0 || hi > out.dim() || hi > in.dim()) throw domain_error("gram: segment outside basis");
  if (hi <= lo) return SpMat(n, in.rows());
  if (out.haar && in.haar && out.haar == in.haar) return detail::haar_gram(*out.haar, lo, hi);
  Mat A = out.to_dense(), B = in.to_dense();
  Mat G = A.middleCols(lo, hi - lo) * B.middleCols(lo, hi - lo).transpose();
  return G.sparseView(0.0, 0.0);
}

// ------------------------------------------------------------ chain kernels

struct ChainEdge {
  FeatureMap out;  // vector of the node on the left of the edge
  FeatureMap in;   // vector of the node on the right of the edge
  long lo = 0, hi = 0;
  int space = 0;  // coordinate system id; identity blocks need equal spaces
};

//! path-ordered chain: w_0 out_0^T [prod_p (w_p in_{p-1} out_p^T - I)] in_{j-2} w_{j-1}
struct ChainSpec {
  std::vector<Vec> w;
  std::vector<char> minus_identity;
  std::vector<ChainEdge> edges;

  int order() const { return int(w.size()); }
  long n() const { return w.empty() ? 0 : long(w[0].size()); }

  void validate() const {
    int j = order();
    if (j < 2) throw arity_error("chain order must be >= 2");
    if (int(edges.size()) != j - 1) throw domain_error("chain needs j-1 edges");
    if (int(minus_identity.size()) != j) throw domain_error("chain needs j identity flags");
    long n = this->n();
    for (auto& v : w)
      if (v.size() != n) throw domain_error("chain weights have unequal lengths");
    for (auto& e : edges) {
      if (e.out.rows() != n || e.in.rows() != n) throw domain_error("segment/basis mismatch: feature rows");
      if (e.lo < 0 || e.hi > e.out.dim() || e.hi > e.in.dim() || e.lo > e.hi)
        throw domain_error("segment/basis mismatch: [" + std::to_string(e.lo) + "," + std::to_string(e.hi) + ")");
    }
    for (int p = 1; p + 1 < j; ++p)
      if (minus_identity[std::size_t(p)] && edges[std::size_t(p - 1)].space != edges[std::size_t(p)].space)
        throw domain_error("identity block between different coordinate spaces");
  }
};

//! standard chain: eps Z^T prod (c Z Z^T - I) Z delta, all edges on one segment
inline ChainSpec standard_chain(int j, const Vec& eps, const Vec& delta, const Vec& c, const FeatureMap& Z, long lo,
                                long hi) {
  ChainSpec s;
  s.w.push_back(eps);
  for (int p = 1; p + 1 < j; ++p) s.w.push_back(c);
  s.w.push_back(delta);
  s.minus_identity.assign(std::size_t(j), 0);
  for (int p = 1; p + 1 < j; ++p) s.minus_identity[std::size_t(p)] = 1;
  for (int e = 0; e + 1 < j; ++e) s.edges.push_back({Z, Z, lo, hi, 0});
  return s;
}

//! direct evaluation with explicit vectors (oracle path)
inline double chain_kernel_direct(const ChainSpec& s, const int* idx) {
  int j = s.order();
  const auto& e0 = s.edges[0];
  Vec v = s.w[0](idx[0]) * e0.out.row(idx[0]).segment(e0.lo, e0.hi - e0.lo);
  for (int p = 1; p + 1 < j; ++p) {
    const auto& ein = s.edges[std::size_t(p - 1)];
    const auto& eout = s.edges[std::size_t(p)];
    int i = idx[p];
    double sc = v.dot(ein.in.row(i).segment(ein.lo, ein.hi - ein.lo));
    Vec nv = s.w[std::size_t(p)](i) * sc * eout.out.row(i).segment(eout.lo, eout.hi - eout.lo);
    if (s.minus_identity[std::size_t(p)]) {
      long a = std::max(ein.lo, eout.lo), b = std::min(ein.hi, eout.hi);
      for (long r = a; r < b; ++r) nv(r - eout.lo) -= v(r - ein.lo);
    }
    v = nv;
  }
  const auto& el = s.edges.back();
  int i = idx[j - 1];
  return v.dot(el.in.row(i).segment(el.lo, el.hi - el.lo)) * s.w.back()(i);
}

inline GenericKernel as_generic(const ChainSpec& s) {
  return GenericKernel{s.order(), [s](const int* idx) { return chain_kernel_direct(s, idx); }};
}

//! exact expectation of the chain kernel when rows are support outcomes with probabilities
//! (product law over positions, factorized)
inline double chain_expectation(const ChainSpec& s, const Vec& prob) {
  int j = s.order();
  auto dense_seg = [](const FeatureMap& f, const ChainEdge& e) {
    Mat m = f.to_dense();
    return Mat(m.middleCols(e.lo, e.hi - e.lo));
  };
  const auto& e0 = s.edges[0];
  Mat O0 = dense_seg(e0.out, e0);
  Vec v = O0.transpose() * (prob.array() * s.w[0].array()).matrix();
  for (int p = 1; p + 1 < j; ++p) {
    const auto& ein = s.edges[std::size_t(p - 1)];
    const auto& eout = s.edges[std::size_t(p)];
    Mat In = dense_seg(ein.in, ein), Out = dense_seg(eout.out, eout);
    Mat Mp = In.transpose() * (prob.array() * s.w[std::size_t(p)].array()).matrix().asDiagonal() * Out;
    if (s.minus_identity[std::size_t(p)]) {
      long a = std::max(ein.lo, eout.lo), b = std::min(ein.hi, eout.hi);
      for (long r = a; r < b; ++r) Mp(r - ein.lo, r - eout.lo) -= 1.0;
    }
    v = Mp.transpose() * v;
  }
  const auto& el = s.edges.back();
  Mat In = dense_seg(el.in, el);
  Vec r = In.transpose() * (prob.array() * s.w.back().array()).matrix();
  return v.dot(r);
}

// ------------------------------------------------------ chain engine (exact)

namespace detail {

//! all set partitions of {0..r-1} as restricted growth strings
inline const std::vector<std::vector<int>>& set_partitions(int r) {
  static std::mutex mu;
  static std::map<int, std::vector<std::vector<int>>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(r);
  if (it != cache.end()) return it->second;
  std::vector<std::vector<int>> out;
  std::vector<int> a(std::size_t(r), 0);
  std::function<void(int, int)> rec = [&](int pos, int mx) {
    if (pos == r) {
      out.push_back(a);
      return;
    }
    for (int v = 0; v <= mx + 1; ++v) {
      a[std::size_t(pos)] = v;
      rec(pos + 1, std::max(mx, v));
    }
  };
  if (r > 0) {
    a[0] = 0;
    rec(1, 0);
  } else {
    out.push_back({});
  }
  return cache[r] = out;
}

inline double mobius(const std::vector<int>& blocks) {
  int nb = 0;
  for (int b : blocks) nb = std::max(nb, b + 1);
  std::vector<int> sz(std::size_t(nb), 0);
  for (int b : blocks) ++sz[std::size_t(b)];
  double mu = 1.0;
  for (int s : sz) {
    double f = 1.0;
    for (int t = 2; t < s; ++t) f *= t;
    mu *= ((s - 1) % 2 ? -1.0 : 1.0) * f;
  }
  return mu;
}

struct QEdge {
  int u, v;
  SpMat M;  // indexed [u-row, v-col]
};

//! sum over all index assignments of prod node weights * prod edge kernels (variable elimination)
inline double contract(std::vector<Vec> w, std::vector<QEdge> edges) {
  int nb = int(w.size());
  std::vector<char> alive(std::size_t(nb), 1);
  double result = 1.0;
  auto find_edge = [&](int a, int b) -> int {
    for (std::size_t e = 0; e < edges.size(); ++e)
      if ((edges[e].u == a && edges[e].v == b) || (edges[e].u == b && edges[e].v == a)) return int(e);
    return -1;
  };
  for (int remaining = nb; remaining > 0; --remaining) {
    int best = -1, bestdeg = 1 << 30;
    for (int b = 0; b < nb; ++b) {
      if (!alive[std::size_t(b)]) continue;
      int deg = 0;
      for (auto& e : edges)
        if (e.u == b || e.v == b) ++deg;
      if (deg < bestdeg) {
        bestdeg = deg;
        best = b;
      }
    }
    int v = best;
    if (bestdeg == 0) {
      result *= cascade_sum(w[std::size_t(v)]);
    } else if (bestdeg == 1) {
      std::size_t ei = 0;
      for (; ei < edges.size(); ++ei)
        if (edges[ei].u == v || edges[ei].v == v) break;
      QEdge e = std::move(edges[ei]);
      edges.erase(edges.begin() + long(ei));
      if (e.v == v) {
        Vec t = e.M * w[std::size_t(v)];
        w[std::size_t(e.u)].array() *= t.array();
      } else {
        Vec t = e.M.transpose() * w[std::size_t(v)];
        w[std::size_t(e.v)].array() *= t.array();
      }
    } else if (bestdeg == 2) {
      std::vector<std::size_t> inc;
      for (std::size_t ei = 0; ei < edges.size(); ++ei)
        if (edges[ei].u == v || edges[ei].v == v) inc.push_back(ei);
      QEdge e1 = edges[inc[0]], e2 = edges[inc[1]];
      edges.erase(edges.begin() + long(inc[1]));
      edges.erase(edges.begin() + long(inc[0]));
      // orient e1 as [a, v] and e2 as [v, b]
      int a = e1.u == v ? e1.v : e1.u;
      SpMat Av = e1.u == v ? SpMat(e1.M.transpose()) : e1.M;
      int b = e2.u == v ? e2.v : e2.u;
      SpMat Vb = e2.u == v ? e2.M : SpMat(e2.M.transpose());
      SpMat scaled = Av * w[std::size_t(v)].asDiagonal();
      SpMat nm = (scaled * Vb).pruned(0.0, 1e-300);
      if (a == b) {
        w[std::size_t(a)].array() *= Vec(nm.diagonal()).array();
      } else {
        int ex = find_edge(a, b);
        if (ex < 0) {
          edges.push_back({a, b, std::move(nm)});
        } else {
          auto& E = edges[std::size_t(ex)];
          if (E.u == a) E.M = E.M.cwiseProduct(nm);
          else E.M = E.M.cwiseProduct(SpMat(nm.transpose()));
        }
      }
    } else {
      throw std::logic_error("chain contraction: no node of degree <= 2");
    }
    alive[std::size_t(v)] = 0;
  }
  return result;
}

}  // namespace detail

//! exact U-statistic of a ChainSpec without enumerating tuples: identity terms are expanded
//! into subsets of active positions, distinct-index sums via Mobius inversion over set partitions
class ChainEngine {
 public:
  explicit ChainEngine(ChainSpec s) : s_(std::move(s)) { s_.validate(); }

  const ChainSpec& spec() const { return s_; }

  double ustat() {
    int j = s_.order();
    long n = s_.n();
    if (n < j) throw arity_error("ustat_chain: n < j");
    std::vector<int> mids;
    for (int p = 1; p + 1 < j; ++p)
      if (s_.minus_identity[std::size_t(p)]) mids.push_back(p);
    std::vector<double> terms;
    for (unsigned S = 0; S < (1u << mids.size()); ++S) {
      std::vector<int> active;
      int inactive = 0;
      for (int p = 0; p < j; ++p) {
        bool is_mid = p > 0 && p + 1 < j && s_.minus_identity[std::size_t(p)];
        if (!is_mid) {
          active.push_back(p);
          continue;
        }
        std::size_t bit = std::size_t(std::find(mids.begin(), mids.end(), p) - mids.begin());
        if (S >> bit & 1u) ++inactive;
        else active.push_back(p);
      }
      double sign = (inactive % 2) ? -1.0 : 1.0;
      terms.push_back(sign * path_ustat(active));
    }
    return cascade_sum(terms);
  }

  //! kernel value on one tuple (positions in path order), via cached pairwise links
  double tuple_value(const int* idx) {
    int j = s_.order();
    std::vector<int> mids;
    for (int p = 1; p + 1 < j; ++p)
      if (s_.minus_identity[std::size_t(p)]) mids.push_back(p);
    double acc = 0.0;
    for (unsigned S = 0; S < (1u << mids.size()); ++S) {
      std::vector<int> active;
      int inactive = 0;
      for (int p = 0; p < j; ++p) {
        auto it = std::find(mids.begin(), mids.end(), p);
        if (it != mids.end() && (S >> std::size_t(it - mids.begin()) & 1u)) ++inactive;
        else active.push_back(p);
      }
      double term = (inactive % 2) ? -1.0 : 1.0;
      for (int p : active) term *= s_.w[std::size_t(p)](idx[p]);
      for (std::size_t t = 0; t + 1 < active.size() && term != 0.0; ++t) {
        const SpMat* L = link(active[t], active[t + 1]);
        term *= L ? L->coeff(idx[active[t]], idx[active[t + 1]]) : 0.0;
      }
      acc += term;
    }
    return acc;
  }

 private:
  ChainSpec s_;
  std::map<std::tuple<int, int>, std::unique_ptr<SpMat>> links_;
  std::map<std::tuple<int, int>, bool> empty_;

  // link between active nodes a < b (inactive identity nodes between them)
  const SpMat* link(int a, int b) {
    auto key = std::make_tuple(a, b);
    auto it = links_.find(key);
    if (it != links_.end()) return it->second.get();
    if (empty_.count(key)) return nullptr;
    long lo = s_.edges[std::size_t(a)].lo, hi = s_.edges[std::size_t(a)].hi;
    for (int e = a + 1; e < b; ++e) {
      lo = std::max(lo, s_.edges[std::size_t(e)].lo);
      hi = std::min(hi, s_.edges[std::size_t(e)].hi);
    }
    if (hi <= lo) {
      empty_[key] = true;
      return nullptr;
    }
    auto m = std::make_unique<SpMat>(gram(s_.edges[std::size_t(a)].out, s_.edges[std::size_t(b - 1)].in, lo, hi));
    const SpMat* p = m.get();
    links_[key] = std::move(m);
    return p;
  }

  double path_ustat(const std::vector<int>& active) {
    int r = int(active.size());
    long n = s_.n();
    std::vector<const SpMat*> L(std::size_t(r - 1));
    for (int t = 0; t + 1 < r; ++t) {
      L[std::size_t(t)] = link(active[std::size_t(t)], active[std::size_t(t + 1)]);
      if (!L[std::size_t(t)]) return 0.0;
    }
    std::vector<double> parts;
    for (const auto& blocks : detail::set_partitions(r)) {
      int nb = 0;
      for (int b : blocks) nb = std::max(nb, b + 1);
      std::vector<Vec> w(std::size_t(nb), Vec::Ones(n));
      for (int t = 0; t < r; ++t)
        w[std::size_t(blocks[std::size_t(t)])].array() *= s_.w[std::size_t(active[std::size_t(t)])].array();
      std::vector<detail::QEdge> edges;
      for (int t = 0; t + 1 < r; ++t) {
        int u = blocks[std::size_t(t)], v = blocks[std::size_t(t + 1)];
        const SpMat& M = *L[std::size_t(t)];
        if (u == v) {
          w[std::size_t(u)].array() *= Vec(M.diagonal()).array();
          continue;
        }
        SpMat oriented = u < v ? M : SpMat(M.transpose());
        int a = std::min(u, v), b = std::max(u, v);
        bool merged = false;
        for (auto& e : edges)
          if (e.u == a && e.v == b) {
            e.M = e.M.cwiseProduct(oriented);
            merged = true;
          }
        if (!merged) edges.push_back({a, b, oriented});
      }
      parts.push_back(detail::mobius(blocks) * detail::contract(std::move(w), std::move(edges)));
    }
    double scale = 1.0;
    for (int t = 0; t < r; ++t) scale /= double(n - t);
    return cascade_sum(parts) * scale;
  }
};

inline double ustat_chain(const ChainSpec& s) {
  ChainEngine e(s);
  return e.ustat();
}

// ------------------------------------------------------------ variance kernels

//! C(n,2)^{-1} times the U-statistic of the squared symmetrized order-2 chain kernel
inline double ustat_variance_j2(const ChainSpec& s) {
  if (s.order() != 2) throw arity_error("ustat_variance_j2 needs j = 2");
  s.validate();
  long n = s.n();
  const auto& e = s.edges[0];
  SpMat G = gram(e.out, e.in, e.lo, e.hi);
  SpMat K = s.w[0].asDiagonal() * G * s.w[1].asDiagonal();
  SpMat H = 0.5 * (K + SpMat(K.transpose()));
  double fro = H.squaredNorm();
  double diag = Vec(H.diagonal()).squaredNorm();
  double u = (fro - diag) / (double(n) * double(n - 1));
  return u / binom(n, 2);
}

//! same quantity from k x k moment matrices and trace identities (symmetric Z, dense)
inline double ustat_variance_j2_moments(const Vec& eps, const Vec& delta, const Mat& Z) {
  long n = Z.rows();
  Vec e2 = eps.array().square(), d2 = delta.array().square(), ed = (eps.array() * delta.array()).matrix();
  Mat A = Z.transpose() * e2.asDiagonal() * Z;
  Mat B = Z.transpose() * d2.asDiagonal() * Z;
  Mat C = Z.transpose() * ed.asDiagonal() * Z;
  double all = 0.5 * ((A * B).trace() + (C * C).trace());
  Vec nz = Z.rowwise().squaredNorm();
  double diag = (ed.array().square() * nz.array().square()).sum();
  double u = (all - diag) / (double(n) * double(n - 1));
  return u / binom(n, 2);
}

//! Monte Carlo estimate of C(n,j)^{-1} U[(symmetrized kernel)^2] from B distinct j-subsets
inline double ustat_variance_subsample(const ChainSpec& s, long B, std::uint64_t seed) {
  int j = s.order();
  long n = s.n();
  if (n < j) throw arity_error("ustat_variance_subsample: n < j");
  if (B < 1) throw config_error("tuple budget must be >= 1");
  ChainEngine eng(s);
  std::vector<int> perm(static_cast<std::size_t>(j));
  auto sym_value = [&](const std::vector<int>& subset) {
    std::vector<int> p(subset);
    std::sort(p.begin(), p.end());
    double acc = 0.0;
    long cnt = 0;
    do {
      acc += eng.tuple_value(p.data());
      ++cnt;
    } while (std::next_permutation(p.begin(), p.end()));
    return acc / double(cnt);
  };
  std::vector<double> vals;
  double total = binom(n, j);
  if (total <= double(B)) {
    std::vector<int> c(static_cast<std::size_t>(j));
    std::iota(c.begin(), c.end(), 0);
    while (true) {
      double v = sym_value(c);
      vals.push_back(v * v);
      int i = j - 1;
      while (i >= 0 && c[std::size_t(i)] == n - j + i) --i;
      if (i < 0) break;
      ++c[std::size_t(i)];
      for (int t = i + 1; t < j; ++t) c[std::size_t(t)] = c[std::size_t(t - 1)] + 1;
    }
  } else {
    std::mt19937_64 rng(seed);
    std::set<std::vector<int>> seen;
    std::uniform_int_distribution<long> U(0, n - 1);
    while (long(seen.size()) < B) {
      std::set<int> pick;
      while (int(pick.size()) < j) pick.insert(int(U(rng)));
      std::vector<int> sub(pick.begin(), pick.end());
      if (!seen.insert(sub).second) continue;
      double v = sym_value(sub);
      vals.push_back(v * v);
    }
  }
  return cascade_sum(vals) / double(vals.size()) / total;
}

}  // namespace hoif
