#pragma once

#include "hoif/harness/studies.hpp"
#include "hoif/mmd.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace hoif::harness {

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw config_error(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw config_error("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void take(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline DgpSpec parse_dgp(const json& j) {
  detail::reject_unknown(j,
                         {"kind", "functional", "d", "beta_b", "beta_p", "beta_g", "levels", "span_level",
                          "density_level", "density_radius", "radius", "noise", "binary", "floor", "tau", "support",
                          "seed"},
                         "dgp");
  DgpSpec s;
  detail::take(j, "kind", s.kind);
  detail::take(j, "functional", s.functional);
  detail::take(j, "d", s.d);
  detail::take(j, "beta_b", s.beta_b);
  detail::take(j, "beta_p", s.beta_p);
  detail::take(j, "beta_g", s.beta_g);
  detail::take(j, "levels", s.levels);
  detail::take(j, "span_level", s.span_level);
  detail::take(j, "density_level", s.density_level);
  detail::take(j, "density_radius", s.density_radius);
  detail::take(j, "radius", s.radius);
  detail::take(j, "noise", s.noise);
  detail::take(j, "binary", s.binary);
  detail::take(j, "floor", s.floor);
  detail::take(j, "tau", s.tau);
  detail::take(j, "support", s.support);
  detail::take(j, "seed", s.seed);
  parse_kind(s.kind);
  return s;
}

inline HolderConfig parse_holder(const json& j) {
  detail::reject_unknown(j, {"beta_b", "beta_p", "beta_g", "d", "C_b", "C_p", "C_g"}, "holder");
  HolderConfig h;
  detail::take(j, "beta_b", h.beta_b);
  detail::take(j, "beta_p", h.beta_p);
  detail::take(j, "beta_g", h.beta_g);
  detail::take(j, "d", h.d);
  detail::take(j, "C_b", h.C_b);
  detail::take(j, "C_p", h.C_p);
  detail::take(j, "C_g", h.C_g);
  h.validate(true);
  return h;
}

inline StudyConfig parse_config(const json& j) {
  detail::reject_unknown(j,
                         {"study", "dgp", "holder", "n_grid", "reps", "estimators", "m", "k", "k_inflate", "g_known",
                          "fit_level", "g_level", "alpha", "bias_mode", "c_bias", "variance_subsample", "k_grid",
                          "orders", "tau_lo", "tau_hi", "tau_steps", "exact_m", "exact_level", "jitter", "seed",
                          "threads", "budget"},
                         "config");
  StudyConfig c;
  detail::take(j, "study", c.study);
  if (j.contains("dgp")) c.dgp = parse_dgp(j.at("dgp"));
  if (j.contains("holder")) c.holder = parse_holder(j.at("holder"));
  detail::take(j, "n_grid", c.n_grid);
  detail::take(j, "reps", c.reps);
  detail::take(j, "estimators", c.estimators);
  detail::take(j, "m", c.m);
  detail::take(j, "k", c.k);
  detail::take(j, "k_inflate", c.k_inflate);
  detail::take(j, "g_known", c.g_known);
  detail::take(j, "fit_level", c.fit_level);
  detail::take(j, "g_level", c.g_level);
  detail::take(j, "alpha", c.alpha);
  detail::take(j, "bias_mode", c.bias_mode);
  detail::take(j, "c_bias", c.c_bias);
  detail::take(j, "variance_subsample", c.variance_subsample);
  detail::take(j, "k_grid", c.k_grid);
  detail::take(j, "orders", c.orders);
  detail::take(j, "tau_lo", c.tau_lo);
  detail::take(j, "tau_hi", c.tau_hi);
  detail::take(j, "tau_steps", c.tau_steps);
  detail::take(j, "exact_m", c.exact_m);
  detail::take(j, "exact_level", c.exact_level);
  detail::take(j, "jitter", c.jitter);
  detail::take(j, "seed", c.seed);
  detail::take(j, "threads", c.threads);
  detail::take(j, "budget", c.budget);
  static const std::set<std::string> modes{"none", "k_inflate", "explicit"};
  if (!modes.count(c.bias_mode)) throw config_error("bias_mode must be none, k_inflate or explicit");
  c.validate();
  return c;
}

inline StudyConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw config_error("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(j);
}

// --------------------------------------------------------------------- csv

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_num(const std::string& s, long row, const std::string& col) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw domain_error("row " + std::to_string(row) + ", column " + col + ": '" + s + "' is not a number");
  }
}

inline std::vector<std::vector<std::string>> read_csv(std::istream& in, std::vector<std::string>& header) {
  std::string line;
  if (!std::getline(in, line)) throw domain_error("empty CSV");
  header = split_csv_line(line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw domain_error("row " + std::to_string(rows.size() + 1) + " has " + std::to_string(f.size()) +
                         " fields, header has " + std::to_string(header.size()));
    rows.push_back(std::move(f));
  }
  return rows;
}

}  // namespace detail

//! header y,a,x1..xd; every field required
inline Frame read_standard_csv(std::istream& in) {
  std::vector<std::string> h;
  auto rows = detail::read_csv(in, h);
  if (h.size() < 3 || h[0] != "y" || h[1] != "a") throw domain_error("standard CSV header must be y,a,x1..xd");
  for (std::size_t c = 2; c < h.size(); ++c)
    if (h[c] != "x" + std::to_string(c - 1)) throw domain_error("unexpected column '" + h[c] + "'");
  long n = long(rows.size());
  int d = int(h.size()) - 2;
  Frame f;
  f.y.resize(n);
  f.a.resize(n);
  f.x.resize(n, d);
  for (long i = 0; i < n; ++i) {
    auto& r = rows[std::size_t(i)];
    for (std::size_t c = 0; c < r.size(); ++c)
      if (r[c].empty()) throw domain_error("row " + std::to_string(i + 1) + ": missing " + h[c]);
    f.y(i) = detail::parse_num(r[0], i + 1, "y");
    f.a(i) = detail::parse_num(r[1], i + 1, "a");
    for (int a = 0; a < d; ++a) f.x(i, a) = detail::parse_num(r[std::size_t(a + 2)], i + 1, h[std::size_t(a + 2)]);
  }
  return f;
}

//! header r0,l0_1..,r1,l1_1..,y; absent fields empty and checked against the presence pattern
inline mmd::MonotoneFrame read_monotone_csv(std::istream& in) {
  std::vector<std::string> h;
  auto rows = detail::read_csv(in, h);
  std::size_t c = 0;
  if (h.empty() || h[c++] != "r0") throw domain_error("monotone CSV must start with r0");
  int d0 = 0, d1 = 0;
  while (c < h.size() && h[c] == "l0_" + std::to_string(d0 + 1)) ++d0, ++c;
  if (c >= h.size() || h[c++] != "r1") throw domain_error("monotone CSV needs r1 after the l0 block");
  while (c < h.size() && h[c] == "l1_" + std::to_string(d1 + 1)) ++d1, ++c;
  if (c + 1 != h.size() || h[c] != "y") throw domain_error("monotone CSV must end with y");
  if (d0 < 1 || d1 < 1) throw domain_error("monotone CSV needs at least one l0 and one l1 column");
  mmd::MonotoneFrame f;
  f.d0 = d0;
  f.d1 = d1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& r = rows[i];
    long row = long(i) + 1;
    mmd::MonotoneObservation o;
    o.r0 = int(detail::parse_num(r[0], row, "r0"));
    for (int a = 0; a < d0; ++a) o.l0.push_back(detail::parse_num(r[std::size_t(1 + a)], row, h[std::size_t(1 + a)]));
    std::size_t ir1 = std::size_t(1 + d0);
    bool any1 = !r[ir1].empty();
    for (int a = 0; a < d1; ++a) any1 = any1 || !r[ir1 + 1 + std::size_t(a)].empty();
    if (any1) {
      if (r[ir1].empty()) throw domain_error("row " + std::to_string(row) + ": l1 present without r1");
      o.r1 = int(detail::parse_num(r[ir1], row, "r1"));
      std::vector<double> l1;
      for (int a = 0; a < d1; ++a) {
        auto& s = r[ir1 + 1 + std::size_t(a)];
        if (s.empty()) throw domain_error("row " + std::to_string(row) + ": partially missing l1");
        l1.push_back(detail::parse_num(s, row, h[ir1 + 1 + std::size_t(a)]));
      }
      o.l1 = l1;
    }
    if (!r.back().empty()) o.y = detail::parse_num(r.back(), row, "y");
    f.rows.push_back(std::move(o));
  }
  f.validate();
  return f;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw config_error("cannot write '" + p.string() + "'");
  out << s;
}

}  // namespace hoif::harness
