#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "weakfac/errors.hpp"
#include "weakfac/grid.hpp"

namespace wf {

enum class KernelFamily { riesz, custom };

// K(x, y_1..y_m) on (R^n)^{m+1}. The built-in family is the multilinear Riesz
// kernel: component i of (x - y_j) over the norm of the stacked difference
// vector raised to mn+1. It is smooth off the full diagonal, degree -mn
// homogeneous, and Lipschitz there, hence regularity_exponent = 1.
struct KernelDescriptor {
  KernelFamily family = KernelFamily::riesz;
  int m = 1;
  int n = 1;
  int j = 1;  // distinguished slot, 1-based
  int i = 1;  // vector component, 1-based
  double size_constant = 1.0;
  double regularity_exponent = 1.0;
  std::function<double(const Vec&, std::span<const Vec>)> custom_eval;

  void validate() const {
    if (m < 1) throw config_error("kernel: m must be >= 1");
    if (n < 1 || n > max_dim) throw config_error("kernel: n out of supported range");
    if (j < 1 || j > m) throw config_error("kernel: j must lie in [1,m]");
    if (i < 1 || i > n) throw config_error("kernel: i must lie in [1,n]");
    if (!(size_constant > 0)) throw config_error("kernel: size constant must be positive");
    if (family == KernelFamily::riesz) {
      if (regularity_exponent != 1.0)
        throw config_error("kernel: the riesz family has regularity exponent 1");
    } else {
      if (!(regularity_exponent > 0) || regularity_exponent > 1)
        throw config_error("kernel: regularity exponent must lie in (0,1]");
      if (!custom_eval) throw config_error("kernel: custom family needs an evaluator");
    }
  }
};

inline KernelDescriptor riesz_kernel(int m, int n, int j = 1, int i = 1) {
  KernelDescriptor k;
  k.family = KernelFamily::riesz;
  k.m = m;
  k.n = n;
  k.j = j;
  k.i = i;
  k.validate();
  return k;
}

inline double eval_kernel(const KernelDescriptor& k, const Vec& x, std::span<const Vec> ys) {
  if (static_cast<int>(ys.size()) != k.m)
    throw precondition_error("eval_kernel: expected m y-points");
  if (k.family == KernelFamily::custom) return k.custom_eval(x, ys);
  double s2 = 0;
  for (const Vec& y : ys) s2 += dist2(x, y);
  if (s2 == 0.0)
    throw precondition_error("eval_kernel: singular tuple (all points coincide)");
  double s = std::sqrt(s2);
  double num = x[k.i - 1] - ys[k.j - 1][k.i - 1];
  // s^(mn+1) without pow: mn is a small integer.
  double p = s;
  for (int q = 0; q < k.m * k.n; ++q) p *= s;
  return num / p;
}

// Ordered pair sum over the full tuple (y_0..y_m) = (x, y_1..y_m): every
// unordered pair is counted twice. Fixed once so measured constants are
// comparable across runs.
inline double pair_sum(std::span<const Vec> pts) {
  double s = 0;
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = a + 1; b < pts.size(); ++b) s += dist(pts[a], pts[b]);
  return 2.0 * s;
}

struct SampleTuple {
  Vec x;
  std::vector<Vec> ys;
};

struct RegularitySample {
  SampleTuple tuple;
  int slot = 0;  // 0 displaces x, 1..m displaces y_slot
  Vec displaced;
};

struct SizeCheckReport {
  double measured_A = 0;
  std::size_t samples = 0;
  std::size_t skipped = 0;
};

struct RegularityCheckReport {
  double measured_ratio = 0;
  std::size_t samples = 0;
  std::size_t rejected = 0;
};

// max over samples of |K| * pair_sum^{mn}; singular tuples are skipped and
// counted rather than aborting a sweep.
inline SizeCheckReport kernel_size_check(const KernelDescriptor& k,
                                         std::span<const SampleTuple> tuples) {
  k.validate();
  SizeCheckReport rep;
  std::vector<Vec> pts(static_cast<std::size_t>(k.m) + 1);
  for (const SampleTuple& t : tuples) {
    pts[0] = t.x;
    for (int q = 0; q < k.m; ++q) pts[1 + q] = t.ys[q];
    double s2 = 0;
    for (int q = 0; q < k.m; ++q) s2 += dist2(t.x, t.ys[q]);
    if (s2 == 0.0) {
      ++rep.skipped;
      continue;
    }
    double kv = eval_kernel(k, t.x, t.ys);
    double ps = pair_sum(pts);
    double contrib = std::abs(kv);
    for (int q = 0; q < k.m * k.n; ++q) contrib *= ps;
    rep.measured_A = std::max(rep.measured_A, contrib);
    ++rep.samples;
  }
  return rep;
}

// max over samples of |K(tuple) - K(displaced tuple)| * pair_sum^{mn+eps} /
// displacement^eps, under the half-max displacement constraint. Violating
// samples are rejected and counted.
inline RegularityCheckReport kernel_regularity_check(const KernelDescriptor& k,
                                                     std::span<const RegularitySample> samples) {
  k.validate();
  RegularityCheckReport rep;
  std::vector<Vec> pts(static_cast<std::size_t>(k.m) + 1);
  std::vector<Vec> ys2(static_cast<std::size_t>(k.m));
  for (const RegularitySample& s : samples) {
    if (s.slot < 0 || s.slot > k.m) {
      ++rep.rejected;
      continue;
    }
    pts[0] = s.tuple.x;
    for (int q = 0; q < k.m; ++q) pts[1 + q] = s.tuple.ys[q];
    const Vec& yj = pts[static_cast<std::size_t>(s.slot)];
    double dmax = 0;
    for (int q = 0; q <= k.m; ++q)
      if (q != s.slot) dmax = std::max(dmax, dist(yj, pts[static_cast<std::size_t>(q)]));
    double dj = dist(yj, s.displaced);
    if (!(dj <= 0.5 * dmax)) {
      ++rep.rejected;
      continue;
    }
    double k1 = eval_kernel(k, s.tuple.x, s.tuple.ys);
    double k2;
    if (s.slot == 0) {
      k2 = eval_kernel(k, s.displaced, s.tuple.ys);
    } else {
      for (int q = 0; q < k.m; ++q) ys2[q] = s.tuple.ys[q];
      ys2[static_cast<std::size_t>(s.slot - 1)] = s.displaced;
      k2 = eval_kernel(k, s.tuple.x, ys2);
    }
    double contrib = std::abs(k1 - k2);
    if (dj > 0) {
      double ps = pair_sum(pts);
      double eps = k.regularity_exponent;
      contrib *= std::pow(ps, k.m * k.n + eps) / std::pow(dj, eps);
    }  // zero displacement contributes exactly 0
    rep.measured_ratio = std::max(rep.measured_ratio, contrib);
    ++rep.samples;
  }
  return rep;
}

// ---- seeded samplers --------------------------------------------------------

inline Vec random_point(std::mt19937_64& rng, int n, double half_width) {
  std::uniform_real_distribution<double> u(-half_width, half_width);
  Vec v;
  v.n = n;
  for (int a = 0; a < n; ++a) v[a] = u(rng);
  return v;
}

// Uniform tuples in a cube, rejecting near-diagonal configurations so every
// sample clears the verifier preconditions by at least `min_sep`.
inline std::vector<SampleTuple> random_tuples(int m, int n, std::size_t count,
                                              std::uint64_t seed, double half_width = 10.0,
                                              double min_sep = 0.05) {
  std::mt19937_64 rng(seed);
  std::vector<SampleTuple> out;
  out.reserve(count);
  while (out.size() < count) {
    SampleTuple t;
    t.x = random_point(rng, n, half_width);
    t.ys.resize(static_cast<std::size_t>(m));
    for (int q = 0; q < m; ++q) t.ys[q] = random_point(rng, n, half_width);
    double dmin = std::numeric_limits<double>::infinity();
    std::vector<Vec> pts;
    pts.push_back(t.x);
    for (const Vec& y : t.ys) pts.push_back(y);
    for (std::size_t a = 0; a < pts.size(); ++a)
      for (std::size_t b = a + 1; b < pts.size(); ++b)
        dmin = std::min(dmin, dist(pts[a], pts[b]));
    if (dmin < min_sep) continue;
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<RegularitySample> random_regularity_samples(int m, int n, std::size_t count,
                                                               std::uint64_t seed,
                                                               double half_width = 10.0,
                                                               double min_sep = 0.05) {
  std::mt19937_64 rng(seed);
  auto tuples = random_tuples(m, n, count, seed ^ 0x9e3779b97f4a7c15ULL, half_width, min_sep);
  std::uniform_int_distribution<int> uslot(0, m);
  std::uniform_real_distribution<double> ufrac(0.05, 0.5);
  std::vector<RegularitySample> out;
  out.reserve(count);
  for (auto& t : tuples) {
    RegularitySample s;
    s.slot = uslot(rng);
    std::vector<Vec> pts;
    pts.push_back(t.x);
    for (const Vec& y : t.ys) pts.push_back(y);
    const Vec& yj = pts[static_cast<std::size_t>(s.slot)];
    double dmax = 0;
    for (int q = 0; q <= m; ++q)
      if (q != s.slot) dmax = std::max(dmax, dist(yj, pts[static_cast<std::size_t>(q)]));
    Vec dir = random_point(rng, n, 1.0);
    double norm = 0;
    for (int a = 0; a < n; ++a) norm += dir[a] * dir[a];
    norm = std::sqrt(norm);
    if (norm == 0) {
      dir[0] = 1;
      norm = 1;
    }
    double step = ufrac(rng) * dmax;
    s.displaced = yj;
    for (int a = 0; a < n; ++a) s.displaced[a] += step * dir[a] / norm;
    s.tuple = std::move(t);
    out.push_back(std::move(s));
  }
  return out;
}

// ---- structural identities -----------------------------------------------------

struct IdentityCheckReport {
  double scaling_max = 0;       // |s^{mn} K(s.) - K| / |K|
  double translation_max = 0;   // |K(.+v) - K| / |K|
  double antisymmetry_max = 0;  // m=1: |K(x,y) + K(y,x)| / |K|
  std::size_t samples = 0;
};

// Degree -mn homogeneity, translation invariance, and (m=1) antisymmetry on a
// given tuple set, with randomized scale factors and shifts.
inline IdentityCheckReport kernel_identity_check(const KernelDescriptor& k,
                                                 std::span<const SampleTuple> tuples,
                                                 std::mt19937_64& rng) {
  k.validate();
  IdentityCheckReport rep;
  std::uniform_real_distribution<double> uscale(0.5, 2.0);
  std::uniform_real_distribution<double> ushift(-2.0, 2.0);
  std::vector<Vec> ys2(static_cast<std::size_t>(k.m));
  for (const SampleTuple& t : tuples) {
    double base = eval_kernel(k, t.x, t.ys);
    double denom = std::max(std::abs(base), 1e-300);
    double s = uscale(rng);
    Vec sx = t.x;
    for (int a = 0; a < k.n; ++a) sx[a] *= s;
    for (int q = 0; q < k.m; ++q) {
      ys2[static_cast<std::size_t>(q)] = t.ys[static_cast<std::size_t>(q)];
      for (int a = 0; a < k.n; ++a) ys2[static_cast<std::size_t>(q)][a] *= s;
    }
    double scaled = eval_kernel(k, sx, ys2) * std::pow(s, k.m * k.n);
    rep.scaling_max = std::max(rep.scaling_max, std::abs(scaled - base) / denom);

    Vec v;
    v.n = k.n;
    for (int a = 0; a < k.n; ++a) v[a] = ushift(rng);
    Vec tx = t.x;
    for (int a = 0; a < k.n; ++a) tx[a] += v[a];
    for (int q = 0; q < k.m; ++q) {
      ys2[static_cast<std::size_t>(q)] = t.ys[static_cast<std::size_t>(q)];
      for (int a = 0; a < k.n; ++a) ys2[static_cast<std::size_t>(q)][a] += v[a];
    }
    double shifted = eval_kernel(k, tx, ys2);
    rep.translation_max = std::max(rep.translation_max, std::abs(shifted - base) / denom);

    if (k.m == 1) {
      ys2[0] = t.x;
      double swapped = eval_kernel(k, t.ys[0], ys2);
      rep.antisymmetry_max = std::max(rep.antisymmetry_max, std::abs(swapped + base) / denom);
    }
    ++rep.samples;
  }
  return rep;
}

// ---- separated-ball geometry -------------------------------------------------

// Centers along u = (1,..,1)/sqrt(n) at multiples of M*r, relabeled so the
// distinguished slot l sits closest to the base point: slot l gets position 1,
// the remaining slots keep their relative order at positions 2..m.
struct HomogeneityGeometry {
  double r = 1.0;
  double M = 32.0;
  Vec x0;
  int l = 1;

  void validate(int m) const {
    if (!(r > 0)) throw config_error("geometry: r must be positive");
    if (!(M > 10)) throw config_error("geometry: M must exceed 10");
    if (l < 1 || l > m) throw config_error("geometry: slot out of range");
  }
};

inline std::vector<Vec> construction_centers(const Vec& x0, double r, double M, int m, int l) {
  int n = x0.n;
  double us = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<Vec> ys(static_cast<std::size_t>(m), x0);
  for (int slot = 1; slot <= m; ++slot) {
    int k = (slot == l) ? 1 : (slot < l ? slot + 1 : slot);
    for (int a = 0; a < n; ++a)
      ys[static_cast<std::size_t>(slot - 1)][a] = x0[a] + k * M * r * us;
  }
  return ys;
}

}  // namespace wf
