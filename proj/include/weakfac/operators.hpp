#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include "weakfac/errors.hpp"
#include "weakfac/grid.hpp"
#include "weakfac/kernels.hpp"
#include "weakfac/parallel.hpp"

namespace wf {

inline constexpr int max_slots = 8;

// One shared evaluation mesh per experiment: the exact reindexing identities
// (duality, cancellation) only hold when every operand, every evaluation
// point, and both sides of a pairing live on the same lattice.
struct OperatorConfig {
  KernelDescriptor kernel;
  GridSpec eval_mesh;
  double delta = 0;  // near-diagonal exclusion radius; 0 resolves to the spacing
  int workers = 1;
  bool dense_supports = false;  // verification knob: iterate all cells, not just supports

  double resolved_delta() const { return delta == 0 ? eval_mesh.spacing() : delta; }

  void validate() const {
    kernel.validate();
    eval_mesh.validate();
    if (kernel.m > max_slots) throw config_error("operator: m exceeds supported slot count");
    if (kernel.n != eval_mesh.dim())
      throw config_error("operator: kernel dimension must match the mesh");
    if (resolved_delta() < 0.5 * eval_mesh.spacing() * (1 - 1e-12))
      throw config_error("operator: exclusion radius must be at least half the spacing");
  }
};

struct ApplyStats {
  std::uint64_t tuples = 0;
  std::uint64_t excluded = 0;
  bool exclusion_fired = false;
  bool coverage_warning = false;  // some evaluation point lost every tuple to the filter
};

// The near-diagonal filter looks at the unordered point set, so swapping which
// operator (T vs its partial adjoint) visits a tuple never changes exclusion.
inline bool tuple_excluded(std::span<const Vec> pts, double delta) {
  double d2min = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = a + 1; b < pts.size(); ++b)
      d2min = std::min(d2min, dist2(pts[a], pts[b]));
  return d2min < delta * delta;
}

namespace detail {

struct SlotData {
  std::vector<std::size_t> cells;  // ascending support indices
  std::vector<double> centers;     // n coords per entry
  std::vector<double> fvals;
  std::vector<double> bvals;  // only for the commutator slot
};

struct TupleJob {
  const OperatorConfig* cfg = nullptr;
  bool adjoint = false;
  int l = 1;                        // adjoint slot / commutator slot
  std::vector<const GridFn*> fs;    // geometric slot order 1..m
  const GridFn* b = nullptr;        // commutator weight; implies direct mode
  std::span<const std::size_t> eval_cells;
};

// Iteration state resolved once per job.
struct EngineCtx {
  int m = 1, n = 1;
  bool adjoint = false;
  bool riesz = true;
  const KernelDescriptor* kernel = nullptr;
  double delta2 = 0;
  double quad = 1;  // spacing^{mn}
  int order[max_slots] = {};       // depth -> geometric slot (1-based)
  int slot_depth[max_slots + 1] = {};  // geometric slot -> depth
  SlotData slot[max_slots];        // indexed by depth
  int num_mode = 0;   // 0: x - y at num_depth, 1: y - x at depth 0, 2: pt0 - y at num_depth
  int num_depth = 0;
  int bdepth = -1;
  const std::vector<double>* bfull = nullptr;  // b at eval cells
  int im = 0;  // 0-based component
};

template <int N>
inline double d2raw(const double* a, const double* b) {
  double s = 0;
  for (int k = 0; k < N; ++k) {
    double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

// Recursive tensor sum over the operand supports for one evaluation point.
// Depth-incremental bookkeeping keeps the leaf loop branch-light: the stacked
// squared distance in kernel-argument space (s2), the minimum pairwise
// squared distance for the filter (mind2), and the kernel numerator.
template <int N, bool RIESZ>
void tuple_recurse(const EngineCtx& ctx, int d, const double* x, double* fixed,
                   double s2, double mind2, double num, double prodf, double bval,
                   double bx, double& acc, std::uint64_t& included) {
  const SlotData& sd = ctx.slot[d];
  const bool last = (d == ctx.m - 1);
  const double* base = (ctx.adjoint && d > 0) ? fixed : x;  // arg-space anchor
  const std::size_t count = sd.cells.size();
  for (std::size_t t = 0; t < count; ++t) {
    const double* y = sd.centers.data() + t * N;
    double ds2 = d2raw<N>(base, y);
    double s2n = s2 + ds2;
    double m2 = std::min(mind2, d2raw<N>(x, y));
    for (int q = 0; q < d; ++q) m2 = std::min(m2, d2raw<N>(fixed + q * N, y));
    double numn = num;
    if (d == ctx.num_depth) {
      if (ctx.num_mode == 0)
        numn = x[ctx.im] - y[ctx.im];
      else if (ctx.num_mode == 1)
        numn = y[ctx.im] - x[ctx.im];
      else
        numn = fixed[ctx.im] - y[ctx.im];
    }
    double bvn = (d == ctx.bdepth) ? sd.bvals[t] : bval;
    double prodn = prodf * sd.fvals[t];
    if (!last) {
      for (int k = 0; k < N; ++k) fixed[d * N + k] = y[k];
      tuple_recurse<N, RIESZ>(ctx, d + 1, x, fixed, s2n, m2, numn, prodn, bvn, bx, acc,
                              included);
      continue;
    }
    if (m2 < ctx.delta2) continue;
    ++included;
    double val;
    if constexpr (RIESZ) {
      double s = std::sqrt(s2n);
      double pw = s;
      for (int q = 0; q < ctx.m * ctx.n; ++q) pw *= s;
      val = numn / pw;
    } else {
      // generic path: materialize the mapped argument tuple
      for (int k = 0; k < N; ++k) fixed[d * N + k] = y[k];
      Vec ax;
      ax.n = N;
      std::vector<Vec> ays(static_cast<std::size_t>(ctx.m));
      const int l = ctx.adjoint ? ctx.order[0] : 0;
      if (ctx.adjoint) {
        for (int k = 0; k < N; ++k) ax[k] = fixed[k];  // arg0 = y_l
        for (int q = 1; q <= ctx.m; ++q) {
          Vec& w = ays[static_cast<std::size_t>(q - 1)];
          w.n = N;
          if (q == l)
            for (int k = 0; k < N; ++k) w[k] = x[k];
          else
            for (int k = 0; k < N; ++k) w[k] = fixed[ctx.slot_depth[q] * N + k];
        }
      } else {
        for (int k = 0; k < N; ++k) ax[k] = x[k];
        for (int q = 1; q <= ctx.m; ++q) {
          Vec& w = ays[static_cast<std::size_t>(q - 1)];
          w.n = N;
          for (int k = 0; k < N; ++k) w[k] = fixed[ctx.slot_depth[q] * N + k];
        }
      }
      val = ctx.kernel->custom_eval(ax, ays);
    }
    double w = (ctx.bdepth >= 0) ? (bvn - bx) : 1.0;
    acc += val * prodn * w;
  }
}

inline void run_tuple_job(const TupleJob& job, std::vector<double>& out, ApplyStats* st) {
  const OperatorConfig& cfg = *job.cfg;
  cfg.validate();
  const KernelDescriptor& k = cfg.kernel;
  if (static_cast<int>(job.fs.size()) != k.m)
    throw precondition_error("operator: expected one operand per kernel slot");
  for (const GridFn* f : job.fs)
    if (!f->spec.same_mesh(cfg.eval_mesh))
      throw precondition_error("operator: operand grid does not match the master grid");
  if (job.b && !job.b->spec.same_mesh(cfg.eval_mesh))
    throw precondition_error("operator: weight grid does not match the master grid");
  if ((job.adjoint || job.b) && (job.l < 1 || job.l > k.m))
    throw precondition_error("operator: slot index out of range");

  EngineCtx ctx;
  ctx.m = k.m;
  ctx.n = k.n;
  ctx.adjoint = job.adjoint;
  ctx.riesz = (k.family == KernelFamily::riesz);
  ctx.kernel = &k;
  double delta = cfg.resolved_delta();
  ctx.delta2 = delta * delta;
  ctx.quad = 1;
  for (int q = 0; q < k.m * k.n; ++q) ctx.quad *= cfg.eval_mesh.spacing();
  ctx.im = k.i - 1;

  if (job.adjoint) {
    ctx.order[0] = job.l;
    int d = 1;
    for (int q = 1; q <= k.m; ++q)
      if (q != job.l) ctx.order[d++] = q;
  } else {
    for (int q = 0; q < k.m; ++q) ctx.order[q] = q + 1;
  }
  for (int d = 0; d < k.m; ++d) ctx.slot_depth[ctx.order[d]] = d;

  if (job.adjoint) {
    if (k.j == job.l) {
      ctx.num_mode = 1;
      ctx.num_depth = 0;
    } else {
      ctx.num_mode = 2;
      ctx.num_depth = ctx.slot_depth[k.j];
    }
  } else {
    ctx.num_mode = 0;
    ctx.num_depth = ctx.slot_depth[k.j];
  }

  if (job.b) {
    ctx.bdepth = ctx.slot_depth[job.l];
    ctx.bfull = &job.b->values;
  }

  const GridSpec& mesh = cfg.eval_mesh;
  std::uint64_t prod_sizes = 1;
  for (int d = 0; d < k.m; ++d) {
    const GridFn& f = *job.fs[ctx.order[d] - 1];
    SlotData& sd = ctx.slot[d];
    if (cfg.dense_supports) {
      sd.cells.resize(f.values.size());
      for (std::size_t c = 0; c < f.values.size(); ++c) sd.cells[c] = c;
    } else {
      sd.cells = support_cells(f);
    }
    sd.centers.resize(sd.cells.size() * static_cast<std::size_t>(k.n));
    sd.fvals.resize(sd.cells.size());
    for (std::size_t t = 0; t < sd.cells.size(); ++t) {
      Vec c = mesh.cell_center(sd.cells[t]);
      for (int a = 0; a < k.n; ++a) sd.centers[t * static_cast<std::size_t>(k.n) + a] = c[a];
      sd.fvals[t] = f.values[sd.cells[t]];
    }
    if (job.b && d == ctx.bdepth) {
      sd.bvals.resize(sd.cells.size());
      for (std::size_t t = 0; t < sd.cells.size(); ++t) sd.bvals[t] = job.b->values[sd.cells[t]];
    }
    prod_sizes *= sd.cells.size();
  }

  out.assign(job.eval_cells.size(), 0.0);
  std::atomic<std::uint64_t> tot_tuples{0}, tot_excluded{0};
  std::atomic<bool> coverage{false}, fired{false};

  auto worker = [&](std::size_t b0, std::size_t e0) {
    std::uint64_t tuples = 0, excluded = 0;
    bool cov = false, fir = false;
    double xc[max_dim];
    double fixed[max_slots * max_dim];
    for (std::size_t e = b0; e < e0; ++e) {
      std::size_t cell = job.eval_cells[e];
      Vec x = mesh.cell_center(cell);
      for (int a = 0; a < k.n; ++a) xc[a] = x[a];
      double bx = ctx.bfull ? (*ctx.bfull)[cell] : 0.0;
      double acc = 0;
      std::uint64_t included = 0;
      if (prod_sizes > 0) {
        auto dispatch = [&](auto nconst, auto rconst) {
          tuple_recurse<nconst.value, rconst.value>(ctx, 0, xc, fixed, 0.0,
                                                    std::numeric_limits<double>::infinity(),
                                                    0.0, 1.0, 0.0, bx, acc, included);
        };
        if (ctx.riesz) {
          if (k.n == 1)
            dispatch(std::integral_constant<int, 1>{}, std::true_type{});
          else if (k.n == 2)
            dispatch(std::integral_constant<int, 2>{}, std::true_type{});
          else
            dispatch(std::integral_constant<int, 3>{}, std::true_type{});
        } else {
          if (k.n == 1)
            dispatch(std::integral_constant<int, 1>{}, std::false_type{});
          else if (k.n == 2)
            dispatch(std::integral_constant<int, 2>{}, std::false_type{});
          else
            dispatch(std::integral_constant<int, 3>{}, std::false_type{});
        }
      }
      out[e] = acc * ctx.quad;
      tuples += prod_sizes;
      excluded += prod_sizes - included;
      if (prod_sizes > 0 && included == 0) cov = true;
      if (included < prod_sizes) fir = true;
    }
    tot_tuples.fetch_add(tuples);
    tot_excluded.fetch_add(excluded);
    if (cov) coverage.store(true);
    if (fir) fired.store(true);
  };
  parallel_for(job.eval_cells.size(), cfg.workers, worker);

  if (st) {
    st->tuples += tot_tuples.load();
    st->excluded += tot_excluded.load();
    st->exclusion_fired = st->exclusion_fired || fired.load();
    st->coverage_warning = st->coverage_warning || coverage.load();
  }
}

inline std::vector<std::size_t> all_cells(const GridSpec& spec) {
  std::vector<std::size_t> v(spec.cell_count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

}  // namespace detail

// T(f_1..f_m)(x) = sum over non-excluded tuples of K(x,y)*prod f_j(y_j)*spacing^{mn},
// evaluated at the requested cells only.
inline GridFn apply_T_at(const OperatorConfig& cfg, std::span<const GridFn> fs,
                         std::span<const std::size_t> eval_cells, ApplyStats* st = nullptr) {
  detail::TupleJob job;
  job.cfg = &cfg;
  for (const GridFn& f : fs) job.fs.push_back(&f);
  job.eval_cells = eval_cells;
  std::vector<double> vals;
  detail::run_tuple_job(job, vals, st);
  GridFn out = zero_fn(cfg.eval_mesh);
  for (std::size_t e = 0; e < eval_cells.size(); ++e) out.values[eval_cells[e]] = vals[e];
  return out;
}

inline GridFn apply_T(const OperatorConfig& cfg, std::span<const GridFn> fs,
                      ApplyStats* st = nullptr) {
  auto cells = detail::all_cells(cfg.eval_mesh);
  return apply_T_at(cfg, fs, cells, st);
}

// Partial adjoint: kernel argument roles of x and y_l swap; same filter, same
// tuple set, so the discrete Fubini identity is a pure reindexing.
inline GridFn apply_partial_adjoint_at(const OperatorConfig& cfg, int l,
                                       std::span<const GridFn> fs,
                                       std::span<const std::size_t> eval_cells,
                                       ApplyStats* st = nullptr) {
  detail::TupleJob job;
  job.cfg = &cfg;
  job.adjoint = true;
  job.l = l;
  for (const GridFn& f : fs) job.fs.push_back(&f);
  job.eval_cells = eval_cells;
  std::vector<double> vals;
  detail::run_tuple_job(job, vals, st);
  GridFn out = zero_fn(cfg.eval_mesh);
  for (std::size_t e = 0; e < eval_cells.size(); ++e) out.values[eval_cells[e]] = vals[e];
  return out;
}

inline GridFn apply_partial_adjoint(const OperatorConfig& cfg, int l, std::span<const GridFn> fs,
                                    ApplyStats* st = nullptr) {
  auto cells = detail::all_cells(cfg.eval_mesh);
  return apply_partial_adjoint_at(cfg, l, fs, cells, st);
}

// [b,T]_l as one fused tensor sum with weight (b(y_l) - b(x)). Regrouping the
// two defining sums termwise is what makes a constant b give exactly zero.
inline GridFn commutator_apply_at(const OperatorConfig& cfg, int l, const GridFn& b,
                                  std::span<const GridFn> fs,
                                  std::span<const std::size_t> eval_cells,
                                  ApplyStats* st = nullptr) {
  detail::TupleJob job;
  job.cfg = &cfg;
  job.l = l;
  job.b = &b;
  for (const GridFn& f : fs) job.fs.push_back(&f);
  job.eval_cells = eval_cells;
  std::vector<double> vals;
  detail::run_tuple_job(job, vals, st);
  GridFn out = zero_fn(cfg.eval_mesh);
  for (std::size_t e = 0; e < eval_cells.size(); ++e) out.values[eval_cells[e]] = vals[e];
  return out;
}

inline GridFn commutator_apply(const OperatorConfig& cfg, int l, const GridFn& b,
                               std::span<const GridFn> fs, ApplyStats* st = nullptr) {
  auto cells = detail::all_cells(cfg.eval_mesh);
  return commutator_apply_at(cfg, l, b, fs, cells, st);
}

// Pi_l(g, h) = h_l * T_l^*(h_1,..,g,..,h_m) - g * T(h_1,..,h_m). Both terms
// carry pointwise prefactors, so the result is supported exactly on
// supp(h_l) union supp(g); evaluation is restricted accordingly.
inline GridFn pi_apply(const OperatorConfig& cfg, int l, const GridFn& g,
                       std::span<const GridFn> hs, ApplyStats* st = nullptr) {
  cfg.validate();
  if (l < 1 || l > cfg.kernel.m) throw precondition_error("pi_apply: slot out of range");
  if (!g.spec.same_mesh(cfg.eval_mesh))
    throw precondition_error("pi_apply: operand grid does not match the master grid");
  const GridFn& hl = hs[static_cast<std::size_t>(l - 1)];

  std::vector<GridFn> adj_args(hs.begin(), hs.end());
  adj_args[static_cast<std::size_t>(l - 1)] = g;

  GridFn out = zero_fn(cfg.eval_mesh);

  auto evalA = cfg.dense_supports ? detail::all_cells(cfg.eval_mesh) : support_cells(hl);
  GridFn t1 = apply_partial_adjoint_at(cfg, l, adj_args, evalA, st);
  for (std::size_t c : evalA) out.values[c] += hl.values[c] * t1.values[c];

  auto evalB = cfg.dense_supports ? detail::all_cells(cfg.eval_mesh) : support_cells(g);
  GridFn t2 = apply_T_at(cfg, hs, evalB, st);
  for (std::size_t c : evalB) out.values[c] -= g.values[c] * t2.values[c];

  return out;
}

inline double inner_product(const GridFn& f, const GridFn& g) {
  if (!f.spec.same_mesh(g.spec))
    throw precondition_error("inner_product: operands must share the master grid");
  double s = pairwise_map_sum(0, f.values.size(),
                              [&](std::size_t i) { return f.values[i] * g.values[i]; });
  return s * cell_volume(f.spec);
}

}  // namespace wf
