#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "weakfac/errors.hpp"

namespace wf {

// Small fixed-capacity point type; the toolkit targets n in {1,2} with a
// little headroom. Heap-free on purpose: these live in quadrature inner loops.
inline constexpr int max_dim = 3;

struct Vec {
  int n = 1;
  std::array<double, max_dim> c{};

  Vec() = default;
  explicit Vec(double x) : n(1), c{x, 0, 0} {}
  Vec(double x, double y) : n(2), c{x, y, 0} {}
  Vec(int dim, const double* p) : n(dim) {
    for (int a = 0; a < dim; ++a) c[a] = p[a];
  }

  double& operator[](int a) { return c[a]; }
  double operator[](int a) const { return c[a]; }
};

inline double dist2(const Vec& a, const Vec& b) {
  double s = 0;
  for (int k = 0; k < a.n; ++k) {
    double d = a.c[k] - b.c[k];
    s += d * d;
  }
  return s;
}

inline double dist(const Vec& a, const Vec& b) { return std::sqrt(dist2(a, b)); }

struct Box {
  Vec center;
  Vec half_width;  // positive per axis

  int dim() const { return center.n; }

  double lo(int a) const { return center[a] - half_width[a]; }
  double hi(int a) const { return center[a] + half_width[a]; }

  void validate() const {
    if (center.n < 1 || center.n > max_dim || center.n != half_width.n)
      throw config_error("Box: dimension must be in [1," + std::to_string(max_dim) +
                         "] and consistent");
    for (int a = 0; a < center.n; ++a)
      if (!(half_width[a] > 0) || !std::isfinite(half_width[a]))
        throw config_error("Box: half_width must be positive and finite on every axis");
  }
};

struct Ball {
  Vec center;
  double radius = 0;

  void validate() const {
    if (!(radius > 0) || !std::isfinite(radius))
      throw config_error("Ball: radius must be positive");
  }
};

// Uniform grid over a box. Cell centers tile the box: coordinate of cell index
// i on axis a is box.lo(a) + (i + 0.5) * spacing. The spacing must agree on
// all axes, which pins down equal half-widths for a shared points_per_axis.
struct GridSpec {
  Box box;
  int points_per_axis = 0;

  int dim() const { return box.dim(); }
  double spacing() const { return 2.0 * box.half_width[0] / points_per_axis; }

  std::size_t cell_count() const {
    std::size_t c = 1;
    for (int a = 0; a < dim(); ++a) c *= static_cast<std::size_t>(points_per_axis);
    return c;
  }

  void validate() const {
    box.validate();
    if (points_per_axis < 4) throw config_error("GridSpec: points_per_axis must be >= 4");
    double d0 = 2.0 * box.half_width[0] / points_per_axis;
    for (int a = 1; a < dim(); ++a) {
      double da = 2.0 * box.half_width[a] / points_per_axis;
      if (std::abs(da - d0) > 1e-12 * std::max(1.0, std::abs(d0)))
        throw config_error("GridSpec: spacing must be identical on all axes");
    }
  }

  // Row-major flat index, last axis fastest.
  Vec cell_center(std::size_t flat) const {
    Vec x;
    x.n = dim();
    double d = spacing();
    for (int a = dim() - 1; a >= 0; --a) {
      std::size_t i = flat % static_cast<std::size_t>(points_per_axis);
      flat /= static_cast<std::size_t>(points_per_axis);
      x[a] = box.lo(a) + (static_cast<double>(i) + 0.5) * d;
    }
    return x;
  }

  // Index of the cell containing x on one axis, clamped into range.
  int axis_cell(int a, double coord) const {
    double d = spacing();
    double t = (coord - box.lo(a)) / d;
    int i = static_cast<int>(std::floor(t));
    if (i < 0) i = 0;
    if (i >= points_per_axis) i = points_per_axis - 1;
    return i;
  }

  std::size_t flat_index(const int* idx) const {
    std::size_t f = 0;
    for (int a = 0; a < dim(); ++a)
      f = f * static_cast<std::size_t>(points_per_axis) + static_cast<std::size_t>(idx[a]);
    return f;
  }

  // Nearest cell center to an arbitrary point (the snap used whenever a
  // construction asks for a value "at" an off-lattice point).
  std::size_t snap_cell(const Vec& x) const {
    int idx[max_dim] = {0, 0, 0};
    for (int a = 0; a < dim(); ++a) idx[a] = axis_cell(a, x[a]);
    return flat_index(idx);
  }

  bool same_mesh(const GridSpec& o) const {
    if (dim() != o.dim() || points_per_axis != o.points_per_axis) return false;
    for (int a = 0; a < dim(); ++a)
      if (box.center[a] != o.box.center[a] || box.half_width[a] != o.box.half_width[a])
        return false;
    return true;
  }

  bool contains(const Vec& x, double pad = 0.0) const {
    for (int a = 0; a < dim(); ++a)
      if (x[a] < box.lo(a) + pad || x[a] > box.hi(a) - pad) return false;
    return true;
  }

  bool contains_ball(const Ball& b, double pad = 0.0) const {
    for (int a = 0; a < b.center.n; ++a)
      if (b.center[a] - b.radius < box.lo(a) + pad || b.center[a] + b.radius > box.hi(a) - pad)
        return false;
    return true;
  }
};

struct GridFn {
  GridSpec spec;
  std::vector<double> values;  // treat as immutable once built

  std::size_t size() const { return values.size(); }
};

// Deterministic pairwise reduction; fixed split points make the result
// independent of callers and worker counts.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0;
    for (double x : v) s += x;
    return s;
  }
  std::size_t half = v.size() / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

template <class F>
double pairwise_map_sum(std::size_t lo, std::size_t hi, F&& f) {
  if (hi - lo <= 8) {
    double s = 0;
    for (std::size_t i = lo; i < hi; ++i) s += f(i);
    return s;
  }
  std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_map_sum(lo, mid, f) + pairwise_map_sum(mid, hi, f);
}

template <class Sampler>
GridFn make_grid_fn(const GridSpec& spec, Sampler&& sampler) {
  spec.validate();
  GridFn f;
  f.spec = spec;
  f.values.resize(spec.cell_count());
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    double v = sampler(spec.cell_center(i));
    if (!std::isfinite(v)) {
      Vec x = spec.cell_center(i);
      std::string where = "(";
      for (int a = 0; a < spec.dim(); ++a)
        where += (a ? "," : "") + std::to_string(x[a]);
      where += ")";
      throw precondition_error("make_grid_fn: non-finite sample at cell " +
                               std::to_string(i) + " centered " + where);
    }
    f.values[i] = v;
  }
  return f;
}

inline GridFn zero_fn(const GridSpec& spec) {
  spec.validate();
  GridFn f;
  f.spec = spec;
  f.values.assign(spec.cell_count(), 0.0);
  return f;
}

inline double cell_volume(const GridSpec& spec) {
  double v = 1;
  for (int a = 0; a < spec.dim(); ++a) v *= spec.spacing();
  return v;
}

// Midpoint rule: sum of samples times the cell volume.
inline double integrate(const GridFn& f) {
  return pairwise_sum(f.values) * cell_volume(f.spec);
}

inline double lp_norm(const GridFn& f, double p) {
  if (std::isinf(p)) {
    double m = 0;
    for (double v : f.values) m = std::max(m, std::abs(v));
    return m;
  }
  if (!(p >= 1)) throw precondition_error("lp_norm: p must be >= 1 or infinity");
  double s = pairwise_map_sum(0, f.values.size(),
                              [&](std::size_t i) { return std::pow(std::abs(f.values[i]), p); });
  return std::pow(s * cell_volume(f.spec), 1.0 / p);
}

/// Sharp indicator: 1 at cell centers inside the closed ball. `empty_warning`
// (if given) is set when no cell center landed inside.
inline GridFn ball_indicator(const Ball& ball, const GridSpec& spec,
                             bool* empty_warning = nullptr) {
  ball.validate();
  spec.validate();
  if (ball.center.n != spec.dim())
    throw precondition_error("ball_indicator: dimension mismatch");
  GridFn f = zero_fn(spec);
  double r2 = ball.radius * ball.radius;
  // Only scan the index window that can intersect the ball.
  int lo[max_dim] = {0, 0, 0}, hi[max_dim] = {0, 0, 0};
  for (int a = 0; a < spec.dim(); ++a) {
    lo[a] = spec.axis_cell(a, ball.center[a] - ball.radius);
    hi[a] = spec.axis_cell(a, ball.center[a] + ball.radius);
  }
  std::size_t hits = 0;
  int idx[max_dim] = {lo[0], lo[1], lo[2]};
  int nd = spec.dim();
  while (true) {
    std::size_t flat = spec.flat_index(idx);
    Vec x = spec.cell_center(flat);
    if (dist2(x, ball.center) <= r2) {
      f.values[flat] = 1.0;
      ++hits;
    }
    int a = nd - 1;
    while (a >= 0) {
      if (++idx[a] <= hi[a]) break;
      idx[a] = lo[a];
      --a;
    }
    if (a < 0) break;
  }
  if (empty_warning) *empty_warning = (hits == 0);
  return f;
}

// Nonzero cell indices in ascending order; exact zeros are skipped, which is
// harmless because a zero sample contributes an exact no-op to every tensor sum.
inline std::vector<std::size_t> support_cells(const GridFn& f) {
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i < f.values.size(); ++i)
    if (f.values[i] != 0.0) s.push_back(i);
  return s;
}

inline GridFn scale_fn(const GridFn& f, double a) {
  GridFn g = f;
  for (double& v : g.values) v *= a;
  return g;
}

inline void axpy(GridFn& acc, double a, const GridFn& x) {
  if (!acc.spec.same_mesh(x.spec))
    throw precondition_error("axpy: operands must share the master grid");
  for (std::size_t i = 0; i < acc.values.size(); ++i) acc.values[i] += a * x.values[i];
}

// ---- serialization ----------------------------------------------------------

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Text format: one header line "n N center... half_width..." then one value
// per line in row-major cell order.
inline void save_gridfn_text(const GridFn& f, std::ostream& os) {
  os << f.spec.dim() << ' ' << f.spec.points_per_axis;
  for (int a = 0; a < f.spec.dim(); ++a) os << ' ' << fmt_g17(f.spec.box.center[a]);
  for (int a = 0; a < f.spec.dim(); ++a) os << ' ' << fmt_g17(f.spec.box.half_width[a]);
  os << '\n';
  for (double v : f.values) os << fmt_g17(v) << '\n';
}

inline GridFn load_gridfn_text(std::istream& is) {
  int n = 0, N = 0;
  if (!(is >> n >> N)) throw io_error("gridfn text: bad header");
  if (n < 1 || n > max_dim) throw io_error("gridfn text: unsupported dimension");
  GridSpec spec;
  spec.box.center.n = n;
  spec.box.half_width.n = n;
  spec.points_per_axis = N;
  for (int a = 0; a < n; ++a)
    if (!(is >> spec.box.center[a])) throw io_error("gridfn text: bad center");
  for (int a = 0; a < n; ++a)
    if (!(is >> spec.box.half_width[a])) throw io_error("gridfn text: bad half_width");
  spec.validate();
  GridFn f;
  f.spec = spec;
  f.values.resize(spec.cell_count());
  for (std::size_t i = 0; i < f.values.size(); ++i)
    if (!(is >> f.values[i])) throw io_error("gridfn text: truncated values");
  return f;
}

// CSV export with cell-center coordinates, RFC-4180 line endings.
inline void save_gridfn_csv(const GridFn& f, std::ostream& os) {
  int nd = f.spec.dim();
  for (int a = 0; a < nd; ++a) os << 'x' << (a + 1) << ',';
  os << "value\r\n";
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    Vec x = f.spec.cell_center(i);
    for (int a = 0; a < nd; ++a) os << fmt_g17(x[a]) << ',';
    os << fmt_g17(f.values[i]) << "\r\n";
  }
}

}  // namespace wf
