#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "weakfac/operators.hpp"

using namespace wf;

namespace {

GridSpec spec1d(double center, double half, int N) {
  GridSpec s;
  s.box.center = Vec(center);
  s.box.half_width = Vec(half);
  s.points_per_axis = N;
  s.validate();
  return s;
}

OperatorConfig opcfg(int m, const GridSpec& spec) {
  OperatorConfig cfg;
  cfg.kernel = riesz_kernel(m, spec.dim());
  cfg.eval_mesh = spec;
  return cfg;
}

}  // namespace

TEST_CASE("m=1 operator matches the log antiderivative away from the support") {
  GridSpec s = spec1d(0, 4, 128);  // spacing 1/16
  OperatorConfig cfg = opcfg(1, s);
  GridFn f = ball_indicator(Ball{Vec(-0.5), 0.5}, s);  // indicator of [-1, 0]
  REQUIRE(integrate(f) == Catch::Approx(1.0).margin(1e-12));

  std::vector<GridFn> fs{f};
  GridFn Tf = apply_T(cfg, fs);
  for (double xv : {2.03125, 1.03125, 3.46875}) {
    std::size_t c = s.snap_cell(Vec(xv));
    double x = s.cell_center(c)[0];
    double analytic = std::log((x + 1.0) / x);
    REQUIRE(Tf.values[c] == Catch::Approx(analytic).epsilon(1e-3));
  }
  // inside the support the excluded cell is symmetric, so the principal value
  // survives discretization
  std::size_t c = s.snap_cell(Vec(-0.46875));
  double x = s.cell_center(c)[0];
  double analytic = std::log(std::abs((x + 1.0) / x));
  REQUIRE(Tf.values[c] == Catch::Approx(analytic).epsilon(1e-2));
}

TEST_CASE("partial adjoint matches the separated log oracle") {
  GridSpec s = spec1d(16, 20, 320);  // spacing 1/8, spans [-4, 36]
  OperatorConfig cfg = opcfg(1, s);
  GridFn g = ball_indicator(Ball{Vec(32.0), 1.0}, s);
  std::vector<GridFn> args{g};
  GridFn Tg = apply_partial_adjoint(cfg, 1, args);
  std::size_t c = s.snap_cell(Vec(0.0));
  double y = s.cell_center(c)[0];
  double analytic = std::log((33.0 - y) / (31.0 - y));
  REQUIRE(Tg.values[c] == Catch::Approx(analytic).epsilon(1e-5));
  // frozen reference point: ln(33/31) at the origin
  REQUIRE(analytic == Catch::Approx(0.0625203569813685).epsilon(2e-2));
}

TEST_CASE("sparse support iteration equals the dense path") {
  for (int m : {1, 2}) {
    GridSpec s = spec1d(0, 3, 48);
    OperatorConfig cfg = opcfg(m, s);
    std::vector<GridFn> fs;
    fs.push_back(ball_indicator(Ball{Vec(-1.5), 0.7}, s));
    if (m == 2) fs.push_back(ball_indicator(Ball{Vec(1.25), 0.6}, s));
    GridFn sparse = apply_T(cfg, fs);
    cfg.dense_supports = true;
    GridFn dense = apply_T(cfg, fs);
    for (std::size_t i = 0; i < sparse.values.size(); ++i)
      REQUIRE(sparse.values[i] == dense.values[i]);
  }
}

TEST_CASE("worker count does not change a single bit") {
  for (int m : {1, 2}) {
    GridSpec s = spec1d(0, 3, 48);
    OperatorConfig cfg = opcfg(m, s);
    std::vector<GridFn> fs;
    fs.push_back(ball_indicator(Ball{Vec(-1.0), 0.8}, s));
    if (m == 2) fs.push_back(ball_indicator(Ball{Vec(1.0), 0.8}, s));
    GridFn one = apply_T(cfg, fs);
    cfg.workers = 5;
    GridFn five = apply_T(cfg, fs);
    REQUIRE(one.values == five.values);
  }
}

TEST_CASE("forward and partial adjoint applications pair up") {
  for (int m : {1, 2}) {
    for (int l = 1; l <= m; ++l) {
      GridSpec s = spec1d(0, 3, 48);
      OperatorConfig cfg = opcfg(m, s);
      std::vector<GridFn> hs;
      hs.push_back(ball_indicator(Ball{Vec(-1.4), 0.6}, s));
      if (m == 2) hs.push_back(ball_indicator(Ball{Vec(0.4), 0.5}, s));
      GridFn g = ball_indicator(Ball{Vec(1.8), 0.7}, s);

      GridFn Th = apply_T(cfg, hs);
      double lhs = inner_product(g, Th);

      std::vector<GridFn> args = hs;
      args[static_cast<std::size_t>(l - 1)] = g;
      GridFn Tstar = apply_partial_adjoint(cfg, l, args);
      double rhs = inner_product(hs[static_cast<std::size_t>(l - 1)], Tstar);

      double scale = lp_norm(g, 2) * lp_norm(Th, 2) + 1.0;
      REQUIRE(std::abs(lhs - rhs) <= 1e-12 * scale);
    }
  }
}

TEST_CASE("fused commutator equals the two-apply assembly") {
  for (int m : {1, 2}) {
    GridSpec s = spec1d(0, 3, 48);
    OperatorConfig cfg = opcfg(m, s);
    int l = m;  // exercise the off-first slot for m=2
    std::vector<GridFn> hs;
    hs.push_back(ball_indicator(Ball{Vec(-1.2), 0.6}, s));
    if (m == 2) hs.push_back(ball_indicator(Ball{Vec(0.9), 0.5}, s));
    GridFn b = make_grid_fn(s, [](const Vec& x) { return std::sin(x[0]) + 0.25 * x[0]; });

    GridFn fused = commutator_apply(cfg, l, b, hs);

    std::vector<GridFn> weighted = hs;
    GridFn& wl = weighted[static_cast<std::size_t>(l - 1)];
    for (std::size_t i = 0; i < wl.values.size(); ++i) wl.values[i] *= b.values[i];
    GridFn t1 = apply_T(cfg, weighted);
    GridFn t0 = apply_T(cfg, hs);
    double maxdiff = 0, scale = 0;
    for (std::size_t i = 0; i < fused.values.size(); ++i) {
      double assembled = t1.values[i] - b.values[i] * t0.values[i];
      maxdiff = std::max(maxdiff, std::abs(fused.values[i] - assembled));
      scale = std::max(scale, std::abs(fused.values[i]));
    }
    REQUIRE(maxdiff <= 1e-12 * (scale + 1.0));
  }
}

TEST_CASE("commutator with a constant symbol vanishes identically") {
  for (int m : {1, 2}) {
    GridSpec s = spec1d(0, 3, 48);
    OperatorConfig cfg = opcfg(m, s);
    std::vector<GridFn> hs;
    hs.push_back(ball_indicator(Ball{Vec(-1.0), 0.7}, s));
    if (m == 2) hs.push_back(ball_indicator(Ball{Vec(1.1), 0.6}, s));
    GridFn b = make_grid_fn(s, [](const Vec&) { return 1.0; });
    GridFn comm = commutator_apply(cfg, 1, b, hs);
    for (double v : comm.values) REQUIRE(v == 0.0);
  }
}

TEST_CASE("bilinear form is supported on its operands and has exact mean zero") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> upos(-1.5, 1.5), urad(0.3, 0.8), uamp(-1, 1);
  for (int m : {1, 2}) {
    GridSpec s = spec1d(0, 3, 48);
    OperatorConfig cfg = opcfg(m, s);
    for (int l = 1; l <= m; ++l) {
      for (int rep = 0; rep < 4; ++rep) {
        GridFn g = ball_indicator(Ball{Vec(upos(rng)), urad(rng)}, s);
        std::vector<GridFn> hs;
        for (int q = 0; q < m; ++q) {
          GridFn h = ball_indicator(Ball{Vec(upos(rng)), urad(rng)}, s);
          axpy(h, uamp(rng), ball_indicator(Ball{Vec(upos(rng)), urad(rng)}, s));
          hs.push_back(std::move(h));
        }
        GridFn pi = pi_apply(cfg, l, g, hs);

        // support containment is exact: nothing outside supp(h_l) u supp(g)
        auto gc = support_cells(g);
        auto hc = support_cells(hs[static_cast<std::size_t>(l - 1)]);
        std::vector<bool> allowed(pi.values.size(), false);
        for (std::size_t c : gc) allowed[c] = true;
        for (std::size_t c : hc) allowed[c] = true;
        for (std::size_t i = 0; i < pi.values.size(); ++i)
          if (!allowed[i]) REQUIRE(pi.values[i] == 0.0);

        double np = lp_norm(g, 2);
        for (const GridFn& h : hs) np *= lp_norm(h, 2);
        REQUIRE(std::abs(integrate(pi)) <= 1e-12 * (np + 1.0));
      }
    }
  }
}

TEST_CASE("pairing duality against the commutator holds to rounding") {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> upos(-1.5, 1.5), urad(0.3, 0.8);
  for (int m : {1, 2}) {
    GridSpec s = spec1d(0, 3, 48);
    OperatorConfig cfg = opcfg(m, s);
    for (int l = 1; l <= m; ++l) {
      for (int rep = 0; rep < 3; ++rep) {
        GridFn g = ball_indicator(Ball{Vec(upos(rng)), urad(rng)}, s);
        std::vector<GridFn> hs;
        for (int q = 0; q < m; ++q)
          hs.push_back(ball_indicator(Ball{Vec(upos(rng)), urad(rng)}, s));
        GridFn b = make_grid_fn(s, [](const Vec& x) {
          return std::cos(1.7 * x[0]) + 0.31 * x[0];
        });

        GridFn pi = pi_apply(cfg, l, g, hs);
        double lhs = inner_product(b, pi);
        GridFn comm = commutator_apply_at(cfg, l, b, hs, support_cells(g));
        double rhs = inner_product(g, comm);

        double np = lp_norm(b, 2) * lp_norm(g, 2);
        for (const GridFn& h : hs) np *= lp_norm(h, 2);
        REQUIRE(std::abs(lhs - rhs) <= 1e-10 * (np + 1.0));
      }
    }
  }
}

TEST_CASE("near-diagonal exclusion reports its action") {
  GridSpec s = spec1d(0, 3, 48);
  OperatorConfig cfg = opcfg(1, s);
  GridFn f = ball_indicator(Ball{Vec(0.0), 1.0}, s);
  std::vector<GridFn> fs{f};

  ApplyStats st;
  apply_T(cfg, fs, &st);  // evaluation points include the support itself
  REQUIRE(st.exclusion_fired);
  REQUIRE(st.excluded > 0);
  REQUIRE_FALSE(st.coverage_warning);

  cfg.delta = 100.0;  // larger than the box: every tuple dies
  ApplyStats st2;
  GridFn dead = apply_T(cfg, fs, &st2);
  REQUIRE(st2.coverage_warning);
  for (double v : dead.values) REQUIRE(v == 0.0);
}

TEST_CASE("operator configuration validates operands") {
  GridSpec s = spec1d(0, 3, 48);
  OperatorConfig cfg = opcfg(2, s);
  std::vector<GridFn> one{ball_indicator(Ball{Vec(0.0), 0.5}, s)};
  REQUIRE_THROWS_AS(apply_T(cfg, one), precondition_error);

  GridSpec other = spec1d(0, 3, 64);
  std::vector<GridFn> wrong{ball_indicator(Ball{Vec(0.0), 0.5}, s),
                            ball_indicator(Ball{Vec(0.0), 0.5}, other)};
  REQUIRE_THROWS_AS(apply_T(cfg, wrong), precondition_error);

  std::vector<GridFn> two{ball_indicator(Ball{Vec(-1.0), 0.5}, s),
                          ball_indicator(Ball{Vec(1.0), 0.5}, s)};
  REQUIRE_THROWS_AS(pi_apply(cfg, 3, two[0], two), precondition_error);
}
