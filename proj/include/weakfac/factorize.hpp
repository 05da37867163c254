#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "weakfac/errors.hpp"
#include "weakfac/grid.hpp"
#include "weakfac/hardy.hpp"
#include "weakfac/kernels.hpp"
#include "weakfac/operators.hpp"

namespace wf {

// ---- exponent bookkeeping ------------------------------------------------------

struct FactorExponents {
  double p = 1;                // target exponent
  std::vector<double> p_h;     // per-slot exponents, size m
  double p_g = std::numeric_limits<double>::infinity();  // conjugate of p

  void validate(int m) const {
    if (static_cast<int>(p_h.size()) != m)
      throw config_error("exponents: need one slot exponent per argument");
    if (!(p >= 1)) throw config_error("exponents: p must lie in [1,inf)");
    double inv = 0;
    for (double q : p_h) {
      if (!(q > 1) || std::isinf(q)) throw config_error("exponents: slot exponents must lie in (1,inf)");
      inv += 1.0 / q;
    }
    if (std::abs(inv - 1.0 / p) > 1e-12)
      throw config_error("exponents: slot exponents must satisfy sum 1/p_j = 1/p");
    double conj = std::isinf(p_g) ? 0.0 : 1.0 / p_g;
    if (std::abs(1.0 / p + conj - 1.0) > 1e-12)
      throw config_error("exponents: p_g must be the conjugate of p");
  }
};

// p=1 needs every slot exponent in (1,inf), which m=1 cannot satisfy together
// with sum 1/p_j = 1/p; the single-slot default targets p=2 instead.
inline FactorExponents default_exponents(int m) {
  FactorExponents e;
  if (m == 1) {
    e.p = 2;
    e.p_h = {2.0};
    e.p_g = 2;
  } else {
    e.p = 1;
    e.p_h.assign(static_cast<std::size_t>(m), static_cast<double>(m));
    e.p_g = std::numeric_limits<double>::infinity();
  }
  return e;
}

// ---- factorization terms -------------------------------------------------------

struct FactorTerm {
  double lambda = 0;
  int l = 1;
  GridFn g;
  std::vector<GridFn> hs;
  double g_norm = 0;            // |g|_{p_g}
  std::vector<double> h_norms;  // |h_j|_{p_h[j]}
};

inline FactorTerm make_factor_term(double lambda, int l, GridFn g, std::vector<GridFn> hs,
                                   const FactorExponents& exps) {
  FactorTerm t;
  t.lambda = lambda;
  t.l = l;
  t.g = std::move(g);
  t.hs = std::move(hs);
  t.g_norm = lp_norm(t.g, exps.p_g);
  for (std::size_t j = 0; j < t.hs.size(); ++j) t.h_norms.push_back(lp_norm(t.hs[j], exps.p_h[j]));
  return t;
}

inline void verify_factor_term(const FactorTerm& t, const FactorExponents& exps) {
  auto close = [](double a, double b) {
    return std::abs(a - b) <= 1e-10 * std::max({std::abs(a), std::abs(b), 1.0});
  };
  if (!close(t.g_norm, lp_norm(t.g, exps.p_g)))
    throw degeneracy_error("factor term: stale g norm cache");
  for (std::size_t j = 0; j < t.hs.size(); ++j)
    if (!close(t.h_norms[j], lp_norm(t.hs[j], exps.p_h[j])))
      throw degeneracy_error("factor term: stale h norm cache");
}

// ---- per-atom approximate factorization ----------------------------------------

struct FactorDiagnostics {
  double c_pt = 0;              // |error|_inf * M^eps * r^n
  double h1_error = 0;          // h1_norm_estimate(error_fn)
  double norm_product = 0;      // |g|_{p_g} * prod_j |h_j|_{p_h[j]}
  double norm_product_constant = 0;  // norm_product / M^{mn}
  double denominator_constant = 0;   // |denominator| * M^{mn}
  double snap_distance = 0;     // |x0 - snapped evaluation point|
};

struct AtomFactorization {
  GridFn g;
  std::vector<GridFn> hs;
  double denominator = 0;
  double M = 0;
  int l = 1;
  GridFn error_fn;              // a - Pi_l(g, h)
  bool error_nonzero = false;
  Vec x0, yl;                   // bump centers of the error
  double r = 0;
  FactorDiagnostics diag;
};

inline TwoBump error_bump(const AtomFactorization& af) {
  TwoBump tb;
  tb.fn = af.error_fn;
  tb.x0 = af.x0;
  tb.y0 = af.yl;
  tb.amplitude = lp_norm(af.error_fn, std::numeric_limits<double>::infinity());
  tb.separation = dist(af.x0, af.yl);
  tb.r = af.r;
  return tb;
}

namespace detail {

// geometry both approx_factor_atom and the iteration's deferral test agree on
inline bool factor_geometry_fits(const GridSpec& spec, const Ball& ball, int m, int l, double M,
                                 std::string* why = nullptr) {
  double r = ball.radius;
  const Vec& x0 = ball.center;
  int n = spec.dim();
  if (2.0 * r / spec.spacing() < 8.0 - 1e-9) {
    if (why) *why = "ball not resolved by 8 cells across a diameter";
    return false;
  }
  auto need = [&](const Ball& b, double pad, const char* what) {
    if (spec.contains_ball(b, pad)) return true;
    if (why) *why = std::string("grid too small for ") + what;
    return false;
  };
  if (!need(Ball{x0, r}, 2 * r, "the base ball")) return false;
  auto centers = construction_centers(x0, r, M, m, l);
  for (const Vec& y : centers)
    if (!need(Ball{y, r}, 2 * r, "a construction ball")) return false;
  double us = 1.0 / std::sqrt(static_cast<double>(n));
  Vec far = x0;
  for (int a = 0; a < n; ++a) far[a] += (m + 1) * M * r * us;
  if (!need(Ball{far, 2 * r}, 0, "the far padding point")) return false;
  // the error bump's own decomposition chain
  double D = M * r;
  Vec yl = centers[static_cast<std::size_t>(l - 1)];
  Vec mid = x0;
  for (int a = 0; a < n; ++a) mid[a] = 0.5 * (x0[a] + yl[a]);
  if (!need(Ball{x0, D}, 0, "the near chain ball")) return false;
  if (!need(Ball{yl, D}, 0, "the far chain ball")) return false;
  if (!need(Ball{mid, 1.5 * D}, 0, "the crossing chain ball")) return false;
  return true;
}

}  // namespace detail

inline bool can_factor_atom(const OperatorConfig& cfg, const HAtom& a, int l, double M,
                            std::string* why = nullptr) {
  return detail::factor_geometry_fits(cfg.eval_mesh, a.ball, cfg.kernel.m, l, M, why);
}

// g and the off-slot h_j are indicators of separated balls at distance scale
// M*r; the distinguished slot carries a / T_l^*(...)(x0). The leftover
// a - Pi_l(g, h) is a two-bump function with amplitude ~ M^{-eps} * r^{-n}.
inline AtomFactorization approx_factor_atom(const OperatorConfig& cfg, int l, const HAtom& a,
                                            double M, const FactorExponents& exps) {
  cfg.validate();
  int m = cfg.kernel.m;
  if (l < 1 || l > m) throw precondition_error("approx_factor_atom: slot out of range");
  if (!(M > 10)) throw precondition_error("approx_factor_atom: M must exceed 10");
  exps.validate(m);
  validate_atom(a, "approx_factor_atom");
  if (!a.fn.spec.same_mesh(cfg.eval_mesh))
    throw precondition_error("approx_factor_atom: atom does not live on the master grid");
  std::string why;
  if (!detail::factor_geometry_fits(cfg.eval_mesh, a.ball, m, l, M, &why))
    throw precondition_error("approx_factor_atom: " + why);

  const GridSpec& spec = cfg.eval_mesh;
  int n = spec.dim();
  double r = a.ball.radius;
  auto centers = construction_centers(a.ball.center, r, M, m, l);

  AtomFactorization af;
  af.M = M;
  af.l = l;
  af.r = r;
  af.x0 = a.ball.center;
  af.yl = centers[static_cast<std::size_t>(l - 1)];

  af.g = ball_indicator(Ball{af.yl, r}, spec);
  af.hs.resize(static_cast<std::size_t>(m), zero_fn(spec));
  for (int j = 1; j <= m; ++j)
    if (j != l)
      af.hs[static_cast<std::size_t>(j - 1)] = ball_indicator(Ball{centers[static_cast<std::size_t>(j - 1)], r}, spec);

  // denominator T_l^*(h_1,..,g,..,h_m) at the atom center, snapped to the mesh
  std::vector<GridFn> adj_args = af.hs;
  adj_args[static_cast<std::size_t>(l - 1)] = af.g;
  std::size_t snap = spec.snap_cell(a.ball.center);
  af.diag.snap_distance = dist(spec.cell_center(snap), a.ball.center);
  std::vector<std::size_t> snap_cells{snap};
  GridFn dfn = apply_partial_adjoint_at(cfg, l, adj_args, snap_cells);
  af.denominator = dfn.values[snap];

  double mn_scale = std::pow(M, static_cast<double>(m) * n);
  if (std::abs(af.denominator) < 1e-3 / mn_scale)
    throw degeneracy_error("approx_factor_atom: denominator " + fmt_g17(af.denominator) +
                           " below the homogeneity floor at M=" + fmt_g17(M));
  af.diag.denominator_constant = std::abs(af.denominator) * mn_scale;

  af.hs[static_cast<std::size_t>(l - 1)] = scale_fn(a.fn, 1.0 / af.denominator);

  GridFn pi = pi_apply(cfg, l, af.g, af.hs);
  af.error_fn = a.fn;
  axpy(af.error_fn, -1.0, pi);

  double mean = integrate(af.error_fn);
  if (std::abs(mean) > 1e-10)
    throw degeneracy_error("approx_factor_atom: error mean " + fmt_g17(mean) +
                           " exceeds the cancellation budget");

  double rn = 1;
  for (int q = 0; q < n; ++q) rn *= r;
  double linf = lp_norm(af.error_fn, std::numeric_limits<double>::infinity());
  af.error_nonzero = linf > 0;
  af.diag.c_pt = linf * std::pow(M, cfg.kernel.regularity_exponent) * rn;
  af.diag.h1_error = h1_norm_estimate(af.error_fn, cfg.workers);
  af.diag.norm_product = lp_norm(af.g, exps.p_g);
  for (int j = 1; j <= m; ++j)
    af.diag.norm_product *= lp_norm(af.hs[static_cast<std::size_t>(j - 1)], exps.p_h[static_cast<std::size_t>(j - 1)]);
  af.diag.norm_product_constant = af.diag.norm_product / mn_scale;
  return af;
}

// ---- the geometric iteration ---------------------------------------------------

struct IterationRecord {
  int k = 0;
  double sum_abs_lambda = 0;  // coefficient mass factored this iteration
  double residual_h1 = 0;     // estimate of the carried error after this iteration
  std::size_t term_count = 0;
};

struct WeakFactorization {
  std::vector<FactorTerm> terms;
  std::vector<IterationRecord> report;
  GridFn residual;
  double initial_h1 = 0;
  double rho_hat = 0;        // next-level mass ratio measured after iteration 1
  double measured_rho = 0;   // max ratio of consecutive factored masses
  double total_abs_lambda = 0;
  std::size_t deferred_count = 0;   // atoms carried unfactored (geometry off-grid)
  double deferred_abs_lambda = 0;
};

// Factor every atom, decompose every leftover two-bump, recurse on the pieces.
// Atoms whose construction or chain geometry does not fit the master grid are
// carried unfactored in the residual; they are produced with tiny coefficients
// (long transfers of already-small means), so the residual still shrinks.
inline WeakFactorization weak_factorize(const OperatorConfig& cfg, int l,
                                        const AtomicDecomposition& input, double M,
                                        const FactorExponents& exps, int max_iters, double tol) {
  cfg.validate();
  int m = cfg.kernel.m;
  if (l < 1 || l > m) throw precondition_error("weak_factorize: slot out of range");
  if (!(M > 10)) throw precondition_error("weak_factorize: M must exceed 10");
  if (max_iters < 1) throw precondition_error("weak_factorize: need at least one iteration");
  if (!(tol > 0)) throw precondition_error("weak_factorize: tolerance must be positive");
  exps.validate(m);

  WeakFactorization out;
  out.residual = zero_fn(cfg.eval_mesh);

  std::vector<AtomicDecomposition::Term> current;
  for (const auto& t : input.terms)
    if (t.lambda != 0.0) current.push_back(t);
  if (current.empty()) return out;

  {
    GridFn f0 = zero_fn(cfg.eval_mesh);
    for (const auto& t : current) axpy(f0, t.lambda, t.atom.fn);
    out.initial_h1 = h1_norm_estimate(f0, cfg.workers);
  }

  std::vector<AtomicDecomposition::Term> carried;
  double prev_sum = 0;

  for (int k = 1; k <= max_iters; ++k) {
    std::vector<AtomicDecomposition::Term> next;
    IterationRecord rec;
    rec.k = k;
    for (const auto& [lambda, atom] : current) {
      if (!can_factor_atom(cfg, atom, l, M)) {
        carried.push_back({lambda, atom});
        ++out.deferred_count;
        out.deferred_abs_lambda += std::abs(lambda);
        continue;
      }
      AtomFactorization af = approx_factor_atom(cfg, l, atom, M, exps);
      out.terms.push_back(make_factor_term(lambda, l, std::move(af.g), std::move(af.hs), exps));
      rec.sum_abs_lambda += std::abs(lambda);
      ++rec.term_count;
      if (af.error_nonzero) {
        AtomicDecomposition dec = two_bump_decompose(error_bump(af));
        for (auto& child : dec.terms)
          next.push_back({lambda * child.lambda, std::move(child.atom)});
      }
    }
    if (k == 1 && rec.term_count == 0)
      throw precondition_error("weak_factorize: no input atom fits the master grid; enlarge the box");

    double next_mass = 0;
    for (const auto& t : next) next_mass += std::abs(t.lambda);
    if (k == 1) {
      out.rho_hat = rec.sum_abs_lambda > 0 ? next_mass / rec.sum_abs_lambda : 0.0;
      if (out.rho_hat >= 1.0)
        throw non_contraction_error("weak_factorize: next-level mass ratio " +
                                    fmt_g17(out.rho_hat) + " is not contracting; increase M");
    } else if (prev_sum > 0 && rec.sum_abs_lambda > 0) {
      out.measured_rho = std::max(out.measured_rho, rec.sum_abs_lambda / prev_sum);
    }
    prev_sum = rec.sum_abs_lambda;

    GridFn efn = zero_fn(cfg.eval_mesh);
    for (const auto& t : next) axpy(efn, t.lambda, t.atom.fn);
    for (const auto& t : carried) axpy(efn, t.lambda, t.atom.fn);
    rec.residual_h1 = h1_norm_estimate(efn, cfg.workers);
    out.residual = std::move(efn);
    out.report.push_back(rec);

    current = std::move(next);
    if (rec.residual_h1 <= tol * out.initial_h1) break;
    if (current.empty() && carried.empty()) break;
  }

  // whatever never got factored stays in the residual
  for (const auto& t : current) {
    carried.push_back(t);
    ++out.deferred_count;
    out.deferred_abs_lambda += std::abs(t.lambda);
  }
  for (const auto& t : out.terms) out.total_abs_lambda += std::abs(t.lambda);
  if (out.measured_rho == 0.0) out.measured_rho = out.rho_hat;
  return out;
}

inline GridFn reconstruct(const OperatorConfig& cfg, std::span<const FactorTerm> terms) {
  cfg.validate();
  GridFn acc = zero_fn(cfg.eval_mesh);
  for (const FactorTerm& t : terms) {
    GridFn pi = pi_apply(cfg, t.l, t.g, t.hs);
    axpy(acc, t.lambda, pi);
  }
  return acc;
}

// Master grid sized so the construction of the input atom, the chains of its
// error, and one further generation of both fit with padding. Zero sits on a
// cell boundary, so balls centered there get symmetric cell sets.
inline GridSpec factorization_grid(int m, int n, double M, double r,
                                   double cells_per_radius = 8, double padding_factor = 1.0) {
  if (!(padding_factor >= 1.0))
    throw config_error("factorization_grid: padding factor must be >= 1");
  double rcap = 1.5 * M * r;  // largest chain-atom radius after one generation
  double lo = -(M * rcap + 4 * rcap + 16 * r) * padding_factor;
  double hi = ((m + 1) * M * rcap + 4 * rcap + 16 * r) * padding_factor;
  double dx = r / cells_per_radius;
  long nlo = static_cast<long>(std::ceil(-lo / dx));
  long nhi = static_cast<long>(std::ceil(hi / dx));
  long N = nlo + nhi;
  double a = -static_cast<double>(nlo) * dx;
  double b = static_cast<double>(nhi) * dx;
  Box box;
  box.center.n = n;
  box.half_width.n = n;
  for (int q = 0; q < n; ++q) {
    box.center[q] = 0.5 * (a + b);
    box.half_width[q] = 0.5 * (b - a);
  }
  GridSpec spec{box, static_cast<int>(N)};
  spec.validate();
  return spec;
}

}  // namespace wf
