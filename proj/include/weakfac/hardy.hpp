#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "weakfac/errors.hpp"
#include "weakfac/grid.hpp"
#include "weakfac/operators.hpp"
#include "weakfac/parallel.hpp"

namespace wf {

// ---- atoms -------------------------------------------------------------------

// Mean-zero, sup-norm <= r^{-n}, supported in its ball.
struct HAtom {
  Ball ball;
  GridFn fn;
};

inline double ball_volume(const Ball& b, int n) {
  if (n == 1) return 2.0 * b.radius;
  if (n == 2) return 3.14159265358979323846 * b.radius * b.radius;
  return 4.18879020478639098462 * b.radius * b.radius * b.radius;
}

inline void validate_atom(const HAtom& a, const char* who = "atom") {
  const GridSpec& spec = a.fn.spec;
  int n = spec.dim();
  double rn = 1;
  for (int q = 0; q < n; ++q) rn *= a.ball.radius;
  double r2 = a.ball.radius * a.ball.radius * (1.0 + 1e-12);
  double linf = 0;
  for (std::size_t i = 0; i < a.fn.values.size(); ++i) {
    double v = a.fn.values[i];
    if (v == 0.0) continue;
    linf = std::max(linf, std::abs(v));
    if (dist2(spec.cell_center(i), a.ball.center) > r2)
      throw degeneracy_error(std::string(who) + ": support escapes the ball");
  }
  if (linf * rn > 1.0 + 1e-6)
    throw degeneracy_error(std::string(who) + ": sup-norm bound r^-n violated");
  double mean = integrate(a.fn);
  if (std::abs(mean) > 1e-8 * ball_volume(a.ball, n) / rn)
    throw degeneracy_error(std::string(who) + ": mean-zero violated");
}

enum class AtomProfile { dipole, haar_like, custom };

// dipole: +-r^{-n}/2 on the two half-balls split along axis 1, mean-corrected.
// haar_like: radial version, + on the inner equal-volume core, - outside.
inline HAtom make_atom(const GridSpec& spec, const Ball& ball,
                       AtomProfile profile = AtomProfile::dipole,
                       const std::function<double(const Vec&)>& sampler = {}) {
  spec.validate();
  ball.validate();
  if (2.0 * ball.radius / spec.spacing() < 8.0 - 1e-9)
    throw precondition_error("make_atom: ball must be resolved by >= 8 cells across a diameter");
  bool empty = false;
  GridFn mask = ball_indicator(ball, spec, &empty);
  if (empty) throw precondition_error("make_atom: unresolved ball");

  int n = spec.dim();
  double rn = 1;
  for (int q = 0; q < n; ++q) rn *= ball.radius;
  double amp = 0.5 / rn;
  double core = ball.radius * std::pow(0.5, 1.0 / n);  // equal-volume split radius

  HAtom a;
  a.ball = ball;
  a.fn = zero_fn(spec);
  auto cells = support_cells(mask);
  double sum = 0;
  for (std::size_t c : cells) {
    Vec x = spec.cell_center(c);
    double v;
    switch (profile) {
      case AtomProfile::dipole:
        v = (x[0] > ball.center[0]) ? amp : -amp;
        break;
      case AtomProfile::haar_like:
        v = (dist2(x, ball.center) <= core * core) ? amp : -amp;
        break;
      default:
        v = sampler ? sampler(x) : 0.0;
    }
    if (!std::isfinite(v)) throw precondition_error("make_atom: non-finite sample");
    a.fn.values[c] = v;
    sum += v;
  }
  // mean correction spread over the support
  double corr = cells.empty() ? 0.0 : sum / static_cast<double>(cells.size());
  for (std::size_t c : cells) a.fn.values[c] -= corr;
  validate_atom(a, "make_atom");
  return a;
}

// ---- two-bump inputs -----------------------------------------------------------

// Mean-zero function dominated by two amplitude-A indicator bumps of radius r
// whose centers sit far apart relative to r.
struct TwoBump {
  GridFn fn;
  Vec x0, y0;
  double amplitude = 0;
  double separation = 0;
  double r = 0;

  void validate() const {
    if (!(r > 0) || !(amplitude > 0)) throw precondition_error("two_bump: bad amplitude or radius");
    double d = dist(x0, y0);
    if (std::abs(d - separation) > 1e-9 * std::max(1.0, d))
      throw precondition_error("two_bump: separation does not match the centers");
    if (!(separation / r > 10)) throw precondition_error("two_bump: separation must exceed 10r");
    double r2 = r * r * (1 + 1e-12);
    for (std::size_t i = 0; i < fn.values.size(); ++i) {
      double v = fn.values[i];
      if (v == 0.0) continue;
      if (std::abs(v) > amplitude * (1 + 1e-9))
        throw precondition_error("two_bump: amplitude bound violated");
      Vec c = fn.spec.cell_center(i);
      if (dist2(c, x0) > r2 && dist2(c, y0) > r2)
        throw precondition_error("two_bump: support escapes the bumps");
    }
    int n = fn.spec.dim();
    double rn = 1;
    for (int q = 0; q < n; ++q) rn *= r;
    if (std::abs(integrate(fn)) > 1e-8 * amplitude * rn * 4)
      throw precondition_error("two_bump: mean is not numerically zero");
  }
};

// ---- maximal-function H1 estimate ---------------------------------------------

// Fixed mollifier: c_n (1-|z|^2)^2 on |z|<1, unit mass, C^1.
inline double mollifier_constant(int n) {
  if (n == 1) return 15.0 / 16.0;
  if (n == 2) return 3.0 / 3.14159265358979323846;
  return 105.0 / (32.0 * 3.14159265358979323846);
}

struct MaximalConfig {
  int scale_count = 0;  // scales t_k = 2^k * spacing, k = 0..scale_count-1
  int workers = 1;
};

inline int required_scale_count(const GridSpec& spec) {
  double diam = 2.0 * spec.box.half_width[0] * std::sqrt(static_cast<double>(spec.dim()));
  int K = static_cast<int>(std::ceil(std::log2(4.0 * diam / spec.spacing()) - 1e-12));
  return std::max(K + 1, 6);
}

inline MaximalConfig default_maximal_config(const GridSpec& spec, int workers = 1) {
  MaximalConfig cfg;
  cfg.scale_count = required_scale_count(spec);
  cfg.workers = workers;
  return cfg;
}

struct H1Stats {
  bool cancellation_warning = false;
  std::size_t mesh_cells = 0;
  int scales = 0;
};

namespace detail {

struct H1Leaf {
  Vec center;
  double half = 0;
};

inline double dist_to_bbox(const Vec& x, const double* lo, const double* hi, int n) {
  double s = 0;
  for (int a = 0; a < n; ++a) {
    double d = 0;
    if (x[a] < lo[a]) d = lo[a] - x[a];
    else if (x[a] > hi[a]) d = x[a] - hi[a];
    s += d * d;
  }
  return std::sqrt(s);
}

// Multiresolution mesh: spacing-sized cells near the support, size ~ dist/4
// far away, pruned beyond the mollifier's largest reach.
inline void collect_leaves(Vec center, double half, int level, const double* lo, const double* hi,
                           int n, double tmax, double dx, std::vector<H1Leaf>& out) {
  double halfdiag = half * std::sqrt(static_cast<double>(n));
  double d = dist_to_bbox(center, lo, hi, n);
  if (d - halfdiag > tmax + dx) return;  // unreachable at every scale
  bool refine = (level > 0) && (d < 8.0 * half);  // cell side 2*half > d/4
  if (!refine) {
    out.push_back({center, half});
    return;
  }
  double q = half / 2;
  int corners = 1 << n;
  for (int c = 0; c < corners; ++c) {
    Vec cc = center;
    for (int a = 0; a < n; ++a) cc[a] += ((c >> a) & 1) ? q : -q;
    collect_leaves(cc, q, level - 1, lo, hi, n, tmax, dx, out);
  }
}

struct ScaleEvaluator {
  double t = 0;
  bool binned = false;
  const GridFn* f = nullptr;
  // binned representation: masses on a fixed-center lattice anchored at the
  // support bounding box (linear in f, deterministic)
  double anchor[max_dim] = {};
  double w = 0;
  int nb[max_dim] = {};
  std::vector<double> mass;

  double eval(const Vec& x) const {
    const GridSpec& spec = f->spec;
    int n = spec.dim();
    double c = mollifier_constant(n);
    double tn = 1;
    for (int a = 0; a < n; ++a) tn *= t;
    double acc = 0;
    if (!binned) {
      double vol = cell_volume(spec);
      int lo[max_dim] = {}, hi[max_dim] = {};
      for (int a = 0; a < n; ++a) {
        lo[a] = spec.axis_cell(a, x[a] - t);
        hi[a] = spec.axis_cell(a, x[a] + t);
      }
      int idx[max_dim] = {lo[0], lo[1], lo[2]};
      while (true) {
        std::size_t flat = spec.flat_index(idx);
        double v = f->values[flat];
        if (v != 0.0) {
          double z2 = dist2(spec.cell_center(flat), x) / (t * t);
          if (z2 < 1.0) {
            double u = 1.0 - z2;
            acc += u * u * v;
          }
        }
        int a = n - 1;
        while (a >= 0) {
          if (++idx[a] <= hi[a]) break;
          idx[a] = lo[a];
          --a;
        }
        if (a < 0) break;
      }
      return acc * c / tn * vol;
    }
    int lo[max_dim] = {}, hi[max_dim] = {};
    for (int a = 0; a < n; ++a) {
      lo[a] = std::max(0, static_cast<int>(std::floor((x[a] - t - w - anchor[a]) / w)));
      hi[a] = std::min(nb[a] - 1, static_cast<int>(std::floor((x[a] + t + w - anchor[a]) / w)));
      if (lo[a] > hi[a]) return 0.0;
    }
    int idx[max_dim] = {lo[0], lo[1], lo[2]};
    while (true) {
      std::size_t flat = 0;
      for (int a = 0; a < n; ++a)
        flat = flat * static_cast<std::size_t>(nb[a]) + static_cast<std::size_t>(idx[a]);
      double mv = mass[flat];
      if (mv != 0.0) {
        Vec bc;
        bc.n = n;
        for (int a = 0; a < n; ++a) bc[a] = anchor[a] + (idx[a] + 0.5) * w;
        double z2 = dist2(bc, x) / (t * t);
        if (z2 < 1.0) {
          double u = 1.0 - z2;
          acc += u * u * mv;
        }
      }
      int a = n - 1;
      while (a >= 0) {
        if (++idx[a] <= hi[a]) break;
        idx[a] = lo[a];
        --a;
      }
      if (a < 0) break;
    }
    return acc * c / tn;
  }
};

}  // namespace detail

// Integral of max_k |phi_{t_k} * f| over a multiresolution mesh. This is an
// equivalent-norm estimate with unknown absolute constants: meaningful in
// ratios across parameter sweeps, never as an absolute value. The mesh and
// the far-field binning depend only on the support bounding box, so the
// estimator stays exactly linear under scaling and exactly subadditive for
// operands sharing a support box.
inline double h1_norm_estimate(const GridFn& f, const MaximalConfig& cfg,
                               H1Stats* st = nullptr) {
  f.spec.validate();
  int n = f.spec.dim();
  double dx = f.spec.spacing();
  int need = required_scale_count(f.spec);
  if (cfg.scale_count < 6)
    throw precondition_error("h1_norm_estimate: at least 6 scales required");
  if (cfg.scale_count < need)
    throw precondition_error("h1_norm_estimate: scale list does not cover the domain diameter");

  auto supp = support_cells(f);
  if (supp.empty()) {
    if (st) *st = H1Stats{};
    return 0.0;
  }

  double lo[max_dim], hi[max_dim];
  for (int a = 0; a < n; ++a) {
    lo[a] = std::numeric_limits<double>::infinity();
    hi[a] = -std::numeric_limits<double>::infinity();
  }
  for (std::size_t c : supp) {
    Vec x = f.spec.cell_center(c);
    for (int a = 0; a < n; ++a) {
      lo[a] = std::min(lo[a], x[a] - dx / 2);
      hi[a] = std::max(hi[a], x[a] + dx / 2);
    }
  }

  double l1 = 0;
  for (std::size_t c : supp) l1 += std::abs(f.values[c]);
  l1 *= cell_volume(f.spec);
  bool warn = std::abs(integrate(f)) > 1e-8 * std::max(l1, 1e-300);

  int K = cfg.scale_count - 1;
  double tmax = dx * std::ldexp(1.0, K);

  // scale evaluators
  std::vector<detail::ScaleEvaluator> scales(static_cast<std::size_t>(cfg.scale_count));
  for (int k = 0; k <= K; ++k) {
    auto& se = scales[static_cast<std::size_t>(k)];
    se.t = dx * std::ldexp(1.0, k);
    se.f = &f;
    se.binned = se.t > 8.0 * dx * (1 + 1e-12);
    if (!se.binned) continue;
    se.w = se.t / 8.0;
    std::size_t total = 1;
    for (int a = 0; a < n; ++a) {
      se.anchor[a] = lo[a];
      se.nb[a] = std::max(1, static_cast<int>(std::ceil((hi[a] - lo[a]) / se.w)) + 1);
      total *= static_cast<std::size_t>(se.nb[a]);
    }
    se.mass.assign(total, 0.0);
    double vol = cell_volume(f.spec);
    for (std::size_t c : supp) {
      Vec x = f.spec.cell_center(c);
      std::size_t flat = 0;
      for (int a = 0; a < n; ++a) {
        int bi = std::min(se.nb[a] - 1,
                          std::max(0, static_cast<int>(std::floor((x[a] - se.anchor[a]) / se.w))));
        flat = flat * static_cast<std::size_t>(se.nb[a]) + static_cast<std::size_t>(bi);
      }
      se.mass[flat] += f.values[c] * vol;
    }
  }

  // mesh roots tile the reachable region with tmax-sized cells on the spacing lattice
  std::vector<detail::H1Leaf> leaves;
  {
    int rlo[max_dim], rhi[max_dim];
    for (int a = 0; a < n; ++a) {
      rlo[a] = static_cast<int>(std::floor((lo[a] - tmax - f.spec.box.lo(a)) / tmax));
      rhi[a] = static_cast<int>(std::floor((hi[a] + tmax - f.spec.box.lo(a)) / tmax));
    }
    int idx[max_dim] = {rlo[0], rlo[1], rlo[2]};
    while (true) {
      Vec c;
      c.n = n;
      for (int a = 0; a < n; ++a) c[a] = f.spec.box.lo(a) + (idx[a] + 0.5) * tmax;
      detail::collect_leaves(c, tmax / 2, K, lo, hi, n, tmax, dx, leaves);
      int a = n - 1;
      while (a >= 0) {
        if (++idx[a] <= rhi[a]) break;
        idx[a] = rlo[a];
        --a;
      }
      if (a < 0) break;
    }
  }

  std::vector<double> vals(leaves.size());
  parallel_for(leaves.size(), cfg.workers, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto& leaf = leaves[i];
      double mx = 0;
      for (const auto& se : scales) mx = std::max(mx, std::abs(se.eval(leaf.center)));
      double volume = 1;
      for (int a = 0; a < n; ++a) volume *= 2 * leaf.half;
      vals[i] = mx * volume;
    }
  });

  if (st) {
    st->cancellation_warning = warn;
    st->mesh_cells = leaves.size();
    st->scales = cfg.scale_count;
  }
  return pairwise_sum(vals);
}

inline double h1_norm_estimate(const GridFn& f, int workers = 1, H1Stats* st = nullptr) {
  return h1_norm_estimate(f, default_maximal_config(f.spec, workers), st);
}

// ---- constructive two-bump decomposition --------------------------------------

struct AtomicDecomposition {
  struct Term {
    double lambda = 0;
    HAtom atom;
  };
  std::vector<Term> terms;
};

inline double sum_abs_lambda(const AtomicDecomposition& dec) {
  double s = 0;
  for (const auto& t : dec.terms) s += std::abs(t.lambda);
  return s;
}

inline GridFn decomposition_sum(const AtomicDecomposition& dec, const GridSpec& spec) {
  GridFn acc = zero_fn(spec);
  for (const auto& t : dec.terms) axpy(acc, t.lambda, t.atom.fn);
  return acc;
}

namespace detail {

inline GridFn normalized_indicator(const Ball& b, const GridSpec& spec) {
  bool empty = false;
  GridFn ind = ball_indicator(b, spec, &empty);
  if (empty) throw precondition_error("two_bump_decompose: unresolved chain ball");
  double mass = pairwise_sum(ind.values) * cell_volume(spec);
  for (double& v : ind.values) v /= mass;
  return ind;
}

inline void push_atom(AtomicDecomposition& dec, const GridFn& raw, const Ball& ball) {
  double linf = 0;
  for (double v : raw.values) linf = std::max(linf, std::abs(v));
  if (linf == 0.0) return;  // telescoping collapsed, nothing to emit
  double rn = 1;
  for (int a = 0; a < raw.spec.dim(); ++a) rn *= ball.radius;
  double lambda = linf * rn;
  AtomicDecomposition::Term term;
  term.lambda = lambda;
  term.atom.ball = ball;
  term.atom.fn = scale_fn(raw, 1.0 / lambda);
  validate_atom(term.atom, "two_bump_decompose");
  dec.terms.push_back(std::move(term));
}

}  // namespace detail

// Telescoping chain between the bumps. The near-bump mass mu travels from the
// base bump through concentric normalized indicators growing to the
// separation scale, crosses to the far center inside one enclosing ball, and
// shrinks back down; the two bump remainders become the end atoms. Atom
// count is ceil(log2(D/r)) + 2 and every transfer coefficient is O(|mu|), so
// the total mass grows only logarithmically in the separation.
inline AtomicDecomposition two_bump_decompose(const TwoBump& tb) {
  tb.validate();
  const GridSpec& spec = tb.fn.spec;
  int n = spec.dim();
  double r = tb.r, D = tb.separation;

  int C = static_cast<int>(std::ceil(std::log2(D / r) - 1e-9));
  int n_up = (C - 1 + 1) / 2;  // ceil((C-1)/2)
  int n_down = C - 1 - n_up;

  // every chain ball must fit; otherwise report the padding the caller needs
  Vec mid = tb.x0;
  for (int a = 0; a < n; ++a) mid[a] = 0.5 * (tb.x0[a] + tb.y0[a]);
  Ball cross_ball{mid, 1.5 * D};
  auto require_fits = [&](const Ball& b) {
    if (!spec.contains_ball(b)) {
      double need = 0;
      for (int a = 0; a < n; ++a) {
        need = std::max(need, spec.box.lo(a) - (b.center[a] - b.radius));
        need = std::max(need, (b.center[a] + b.radius) - spec.box.hi(a));
      }
      throw precondition_error("two_bump_decompose: grid too small, extend the box by at least " +
                               fmt_g17(need) + " on the violating side");
    }
  };
  require_fits(Ball{tb.x0, D});
  require_fits(Ball{tb.y0, D});
  require_fits(cross_ball);

  // split cells by nearest bump center (supports are far apart, no ambiguity)
  GridFn f0 = zero_fn(spec), f1 = zero_fn(spec);
  for (std::size_t i = 0; i < tb.fn.values.size(); ++i) {
    double v = tb.fn.values[i];
    if (v == 0.0) continue;
    Vec c = spec.cell_center(i);
    if (dist2(c, tb.x0) <= dist2(c, tb.y0))
      f0.values[i] = v;
    else
      f1.values[i] = v;
  }
  double mu = integrate(f0);

  // shared normalized indicators so consecutive transfers cancel exactly
  std::vector<double> up_radii, down_radii;
  up_radii.push_back(r);
  for (int i = 1; i < n_up; ++i) up_radii.push_back(r * std::pow(D / r, double(i) / n_up));
  up_radii.push_back(D);
  down_radii.push_back(r);
  for (int i = 1; i < n_down; ++i) down_radii.push_back(r * std::pow(D / r, double(i) / n_down));
  down_radii.push_back(D);

  std::vector<GridFn> W, V;
  for (double rad : up_radii) W.push_back(detail::normalized_indicator(Ball{tb.x0, rad}, spec));
  for (double rad : down_radii) V.push_back(detail::normalized_indicator(Ball{tb.y0, rad}, spec));

  AtomicDecomposition dec;

  // start atom: f0 - mu * W0
  {
    GridFn g = f0;
    axpy(g, -mu, W[0]);
    detail::push_atom(dec, g, Ball{tb.x0, r});
  }
  // growing transfers at x0
  for (std::size_t i = 1; i < W.size(); ++i) {
    GridFn g = scale_fn(W[i - 1], mu);
    axpy(g, -mu, W[i]);
    detail::push_atom(dec, g, Ball{tb.x0, up_radii[i]});
  }
  // cross transfer
  {
    GridFn g = scale_fn(W.back(), mu);
    axpy(g, -mu, V.back());
    detail::push_atom(dec, g, cross_ball);
  }
  // shrinking transfers at y0
  for (std::size_t i = V.size() - 1; i >= 1; --i) {
    GridFn g = scale_fn(V[i], mu);
    axpy(g, -mu, V[i - 1]);
    detail::push_atom(dec, g, Ball{tb.y0, down_radii[i]});
  }
  // end atom: f1 + mu * V0
  {
    GridFn g = f1;
    axpy(g, mu, V[0]);
    detail::push_atom(dec, g, Ball{tb.y0, r});
  }
  return dec;
}

// ---- BMO ----------------------------------------------------------------------

// max over axis-aligned dyadic-side windows at all integer positions of the
// window mean of |b - window mean|. Exhaustive, exact enumeration.
inline double bmo_norm(const GridFn& b) {
  b.spec.validate();
  int n = b.spec.dim();
  int N = b.spec.points_per_axis;
  double best = 0;
  if (n == 1) {
    std::vector<double> pre(static_cast<std::size_t>(N) + 1, 0.0);
    for (int i = 0; i < N; ++i) pre[i + 1] = pre[i] + b.values[static_cast<std::size_t>(i)];
    for (int w = 1; w <= N; w *= 2) {
      for (int i0 = 0; i0 + w <= N; ++i0) {
        double mean = (pre[i0 + w] - pre[i0]) / w;
        double osc = 0;
        for (int i = i0; i < i0 + w; ++i)
          osc += std::abs(b.values[static_cast<std::size_t>(i)] - mean);
        best = std::max(best, osc / w);
      }
    }
    return best;
  }
  // n == 2: 2D prefix for means, direct loop for the oscillation
  std::vector<double> pre((static_cast<std::size_t>(N) + 1) * (static_cast<std::size_t>(N) + 1), 0.0);
  auto P = [&](int i, int j) -> double& {
    return pre[static_cast<std::size_t>(i) * (N + 1) + static_cast<std::size_t>(j)];
  };
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      P(i + 1, j + 1) = b.values[static_cast<std::size_t>(i) * N + j] + P(i, j + 1) + P(i + 1, j) - P(i, j);
  for (int w = 1; w <= N; w *= 2) {
    for (int i0 = 0; i0 + w <= N; ++i0)
      for (int j0 = 0; j0 + w <= N; ++j0) {
        double cnt = static_cast<double>(w) * w;
        double mean = (P(i0 + w, j0 + w) - P(i0, j0 + w) - P(i0 + w, j0) + P(i0, j0)) / cnt;
        double osc = 0;
        for (int i = i0; i < i0 + w; ++i)
          for (int j = j0; j < j0 + w; ++j)
            osc += std::abs(b.values[static_cast<std::size_t>(i) * N + j] - mean);
        best = std::max(best, osc / cnt);
      }
  }
  return best;
}

inline GridFn sign_fn(const GridSpec& spec) {
  return make_grid_fn(spec, [](const Vec& x) {
    return (x[0] > 0) ? 1.0 : (x[0] < 0 ? -1.0 : 0.0);
  });
}

// log|x| clamped below at the resolution scale; a standard unbounded BMO test case.
inline GridFn logabs_fn(const GridSpec& spec) {
  double floor_scale = spec.spacing();
  Vec origin;
  origin.n = spec.dim();
  return make_grid_fn(spec, [floor_scale, origin](const Vec& x) {
    return std::log(std::max(std::sqrt(dist2(x, origin)), floor_scale));
  });
}

// ---- commutator lower-bound estimator ------------------------------------------

struct CommutatorTestTuple {
  GridFn g;
  std::vector<GridFn> hs;
  double p_g = 2;               // exponent for g
  std::vector<double> p_h;      // exponents for h_j
};

struct CommutatorEstimateStats {
  std::vector<double> per_tuple;
  std::size_t skipped = 0;
};

// max over the family of |<g, [b,T]_l(h)>| / (|g|_{p'} prod |h_j|_{p_j});
// a lower bound on the operator norm by construction.
inline double estimate_commutator_norm(const OperatorConfig& cfg, int l, const GridFn& b,
                                       std::span<const CommutatorTestTuple> family,
                                       CommutatorEstimateStats* st = nullptr) {
  cfg.validate();
  if (family.empty()) throw precondition_error("estimate_commutator_norm: empty family");
  double best = 0;
  for (const auto& tup : family) {
    double denom = lp_norm(tup.g, tup.p_g);
    for (std::size_t j = 0; j < tup.hs.size(); ++j) denom *= lp_norm(tup.hs[j], tup.p_h[j]);
    if (denom == 0.0) {
      if (st) ++st->skipped;
      continue;
    }
    auto eval_cells = support_cells(tup.g);
    GridFn comm = commutator_apply_at(cfg, l, b, tup.hs, eval_cells);
    double val = std::abs(inner_product(tup.g, comm)) / denom;
    if (st) st->per_tuple.push_back(val);
    best = std::max(best, val);
  }
  return best;
}

// Test family with three kinds of tuples, all scaled by M. Separated-ball
// tuples (the factorization geometry, an atom in the distinguished slot) probe
// the long-range pairing. Zero-straddling window pairs at dyadic widths probe
// odd oscillation across the origin (sign-like symbols). Same-side adjacent
// pairs at dyadic radii probe even symbols whose oscillation concentrates at
// the origin: reflection symmetry cancels those on the straddling windows, but
// the difference of averages between a ball at the origin and its same-side
// neighbour is scale-invariant for log-type symbols.
inline std::vector<CommutatorTestTuple> build_commutator_family(const GridSpec& spec, int m,
                                                                int l, double M, double r) {
  std::vector<CommutatorTestTuple> fam;
  Vec x0;
  x0.n = spec.dim();
  auto centers = construction_centers(x0, r, M, m, l);

  CommutatorTestTuple t1;
  t1.p_g = 2;
  t1.g = ball_indicator(Ball{centers[static_cast<std::size_t>(l - 1)], r}, spec);
  for (int j = 1; j <= m; ++j) {
    if (j == l) {
      t1.hs.push_back(make_atom(spec, Ball{x0, r}).fn);
    } else {
      t1.hs.push_back(ball_indicator(Ball{centers[static_cast<std::size_t>(j - 1)], r}, spec));
    }
    t1.p_h.push_back(2.0 * m);
  }
  fam.push_back(std::move(t1));

  double dx = spec.spacing();
  for (double sigma : {M * dx, 2 * M * dx, 4 * M * dx}) {
    if (sigma < 4 * dx) continue;
    CommutatorTestTuple t;
    t.p_g = 2;
    GridFn win = ball_indicator(Ball{x0, sigma}, spec);
    t.g = win;
    for (int j = 1; j <= m; ++j) {
      if (j == l) {
        t.hs.push_back(win);
      } else {
        t.hs.push_back(ball_indicator(Ball{centers[static_cast<std::size_t>(j - 1)], r}, spec));
      }
      t.p_h.push_back(2.0 * m);
    }
    fam.push_back(std::move(t));
  }

  for (double rho : {0.5 * M * dx, M * dx, 2 * M * dx}) {
    if (rho < 4 * dx) continue;
    Vec gc = x0;
    gc[0] += 3.0 * rho;
    CommutatorTestTuple t;
    t.p_g = 2;
    t.g = ball_indicator(Ball{gc, rho}, spec);
    for (int j = 1; j <= m; ++j) {
      if (j == l) {
        t.hs.push_back(ball_indicator(Ball{x0, rho}, spec));
      } else {
        t.hs.push_back(ball_indicator(Ball{centers[static_cast<std::size_t>(j - 1)], r}, spec));
      }
      t.p_h.push_back(2.0 * m);
    }
    if (support_cells(t.g).empty()) continue;
    fam.push_back(std::move(t));
  }
  return fam;
}

}  // namespace wf
