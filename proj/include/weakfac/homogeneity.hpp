#pragma once

#include <cmath>
#include <vector>

#include "weakfac/errors.hpp"
#include "weakfac/grid.hpp"
#include "weakfac/kernels.hpp"
#include "weakfac/operators.hpp"

namespace wf {

// Separation-scaled lower bound: M^{mn} * min over cell centers x in the base
// ball of |T(indicator balls)(x)|, with the centers placed along the diagonal
// direction at multiples of M*r. A healthy kernel keeps this bounded away
// from zero uniformly in M.
inline double homogeneity_measure(const KernelDescriptor& k, const HomogeneityGeometry& geom,
                                  const GridSpec& spec, int workers = 1) {
  k.validate();
  geom.validate(k.m);
  spec.validate();
  if (geom.x0.n != spec.dim())
    throw precondition_error("homogeneity_measure: geometry dimension mismatch");
  double dx = spec.spacing();
  if (2.0 * geom.r / dx < 8.0 - 1e-9)
    throw precondition_error(
        "homogeneity_measure: balls must be resolved by at least 8 cells across a diameter");

  Ball b0{geom.x0, geom.r};
  if (!spec.contains_ball(b0, geom.r))
    throw precondition_error("homogeneity_measure: base ball must fit with padding >= r");

  auto centers = construction_centers(geom.x0, geom.r, geom.M, k.m, geom.l);
  std::vector<GridFn> ind;
  ind.reserve(centers.size());
  for (const Vec& c : centers) {
    Ball bk{c, geom.r};
    if (!spec.contains_ball(bk, geom.r))
      throw precondition_error("homogeneity_measure: construction ball must fit with padding >= r");
    bool empty = false;
    ind.push_back(ball_indicator(bk, spec, &empty));
    if (empty) throw precondition_error("homogeneity_measure: unresolved construction ball");
  }

  OperatorConfig cfg;
  cfg.kernel = k;
  cfg.eval_mesh = spec;
  cfg.workers = workers;

  GridFn base = ball_indicator(b0, spec);
  auto eval_cells = support_cells(base);
  if (eval_cells.empty())
    throw precondition_error("homogeneity_measure: unresolved base ball");

  GridFn tv = apply_T_at(cfg, ind, eval_cells);
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t c : eval_cells) lo = std::min(lo, std::abs(tv.values[c]));

  double scale = 1;
  for (int q = 0; q < k.m * k.n; ++q) scale *= geom.M;
  return scale * lo;
}

}  // namespace wf
