// Acceptance gate: one pass/fail line per shipped guarantee, with the
// tolerances pinned here and nowhere else. Each case recomputes everything
// from scratch through the public headers.
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "weakfac/cli.hpp"

using namespace wf;
namespace fs = std::filesystem;

namespace {

void report(int k, const char* what, bool ok) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", k, what);
  std::fflush(stdout);
}

GridSpec spec1d(double center, double half, int N) {
  GridSpec s;
  s.box.center = Vec(center);
  s.box.half_width = Vec(half);
  s.points_per_axis = N;
  s.validate();
  return s;
}

OperatorConfig op_for(int m, const GridSpec& spec, int workers = 1) {
  OperatorConfig cfg;
  cfg.kernel = riesz_kernel(m, 1);
  cfg.eval_mesh = spec;
  cfg.workers = workers;
  return cfg;
}

// mean-zero pair of uneven half-ball bumps at 0 and at distance D, mirrored
// with opposite sign (same family as the unit suite)
GridFn uneven_pair(const GridSpec& s, double A, double D, double r) {
  GridFn f = zero_fn(s);
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    double x = s.cell_center(i)[0];
    if (std::abs(x) < r) f.values[i] = x < 0 ? 1.2 * A : 0.8 * A;
    double u = D - x;
    if (std::abs(u) < r) f.values[i] = u < 0 ? -1.2 * A : -0.8 * A;
  }
  return f;
}

std::map<std::string, std::string> dir_snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file())
      files[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
  return files;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "wf_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("criterion 1") {
  const char* what = "vanishing mean and exact duality pairing on 50 seeded tuples";
  try {
    double worst_mean = 0, worst_pair = 0;
    int count = 0;
    for (int m : {1, 2}) {
      GridSpec grid = spec1d(0, 4, m == 1 ? 128 : 96);
      OperatorConfig op = op_for(m, grid);
      std::mt19937_64 rng(m == 1 ? 2024 : 2025);
      for (int t = 0; t < 25; ++t) {
        GridFn g = detail::random_bumps(rng, grid, false);
        std::vector<GridFn> hs;
        for (int q = 0; q < m; ++q) hs.push_back(detail::random_bumps(rng, grid, false));
        GridFn b = detail::random_bumps(rng, grid, true);

        GridFn pi = pi_apply(op, 1, g, hs);
        double np = lp_norm(b, 2) * lp_norm(g, 2);
        for (const GridFn& h : hs) np *= lp_norm(h, 2);

        double dmean = std::abs(integrate(pi)) / std::max(1.0, np);
        GridFn comm = commutator_apply_at(op, 1, b, hs, support_cells(g));
        double dpair = std::abs(inner_product(b, pi) - inner_product(g, comm));
        worst_mean = std::max(worst_mean, dmean);
        worst_pair = std::max(worst_pair, dpair / np);
        ++count;
      }
    }
    bool ok = count == 50 && worst_mean <= 1e-10 && worst_pair <= 1e-10;
    report(1, what, ok);
    CHECK(count == 50);
    CHECK(worst_mean <= 1e-10);
    CHECK(worst_pair <= 1e-10);
  } catch (const std::exception& e) {
    report(1, what, false);
    FAIL(std::string("exception: ") + e.what());
  }
}

TEST_CASE("criterion 2") {
  const char* what = "forward apply matches the logarithmic oracle under refinement";
  try {
    auto worst_err = [&](int N) {
      GridSpec s = spec1d(0, 4, N);
      OperatorConfig op = op_for(1, s);
      std::vector<GridFn> hs{ball_indicator(Ball{Vec(-0.5), 0.5}, s)};
      double worst = 0;
      for (double xq : {0.51, 1.5, 3.0}) {
        std::vector<std::size_t> cells{s.snap_cell(Vec(xq))};
        std::size_t c = cells[0];
        double x = s.cell_center(c)[0];
        GridFn tv = apply_T_at(op, hs, cells);
        double oracle = std::log((x + 1.0) / x);
        worst = std::max(worst, std::abs(tv.values[c] - oracle) / std::abs(oracle));
      }
      return worst;
    };
    double coarse = worst_err(512);   // 64 cells per ball diameter
    double fine = worst_err(2048);    // 256 cells per ball diameter
    bool ok = coarse <= 1e-2 && fine <= 2.5e-3 && fine < coarse;
    report(2, what, ok);
    CHECK(coarse <= 1e-2);
    CHECK(fine <= 2.5e-3);
    CHECK(fine < coarse);
  } catch (const std::exception& e) {
    report(2, what, false);
    FAIL(std::string("exception: ") + e.what());
  }
}

TEST_CASE("criterion 3") {
  const char* what = "separation-scaled lower bound is stable in M";
  try {
    std::map<int, std::vector<double>> clow;
    for (int m : {1, 2}) {
      for (double M : {16.0, 32.0, 64.0}) {
        double half = m * M + 4.0;
        GridSpec s = spec1d(0, half, static_cast<int>(16 * half));
        HomogeneityGeometry geom;
        geom.r = 1.0;
        geom.M = M;
        geom.x0 = Vec(0.0);
        geom.l = 1;
        clow[m].push_back(homogeneity_measure(riesz_kernel(m, 1), geom, s));
      }
    }
    bool bands = true;
    for (int m : {1, 2}) {
      auto [lo, hi] = std::minmax_element(clow[m].begin(), clow[m].end());
      bands = bands && *lo > 0 && *hi / *lo <= 1.5;
    }
    double ref64 = 64.0 * std::log(65.0 / 63.0);
    double rel = std::abs(clow[1][2] / ref64 - 1.0);
    bool ok = bands && rel <= 0.05;
    report(3, what, ok);
    CHECK(bands);
    CHECK(rel <= 0.05);
  } catch (const std::exception& e) {
    report(3, what, false);
    FAIL(std::string("exception: ") + e.what());
  }
}

TEST_CASE("criterion 4") {
  const char* what = "single-step error decays in M with stable constants";
  try {
    OperatorConfig op = op_for(1, factorization_grid(1, 1, 64, 1.0));
    HAtom atom = make_atom(op.eval_mesh, Ball{Vec(0.0), 1.0}, AtomProfile::dipole);
    FactorExponents exps = default_exponents(1);
    std::vector<double> h1s, cpts, npcs;
    for (double M : {16.0, 32.0, 64.0}) {
      AtomFactorization af = approx_factor_atom(op, 1, atom, M, exps);
      h1s.push_back(af.diag.h1_error);
      cpts.push_back(af.diag.c_pt);
      npcs.push_back(af.diag.norm_product_constant);
    }
    double decay = h1s[2] / h1s[0];
    auto band = [](const std::vector<double>& v) {
      auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      return *lo > 0 ? *hi / *lo : std::numeric_limits<double>::infinity();
    };
    bool ok = decay <= 0.55 && band(cpts) <= 2.0 && band(npcs) <= 2.0;
    report(4, what, ok);
    CHECK(decay <= 0.55);
    CHECK(band(cpts) <= 2.0);
    CHECK(band(npcs) <= 2.0);
  } catch (const std::exception& e) {
    report(4, what, false);
    FAIL(std::string("exception: ") + e.what());
  }
}

TEST_CASE("criterion 5") {
  const char* what = "two-bump chains telescope exactly with logarithmic cost";
  try {
    auto chain_stats = [&](double D, double* mass, double* h1) {
      GridSpec s = spec1d(D / 2, 2.5 * D, static_cast<int>(40 * D));
      GridFn f = uneven_pair(s, 0.01, D, 1.0);
      TwoBump tb;
      tb.fn = f;
      tb.x0 = Vec(0.0);
      tb.y0 = Vec(D);
      tb.amplitude = 0.012;
      tb.separation = D;
      tb.r = 1.0;
      AtomicDecomposition dec = two_bump_decompose(tb);

      GridFn rebuilt = zero_fn(s);
      for (const auto& t : dec.terms) axpy(rebuilt, t.lambda, t.atom.fn);
      double maxdiff = 0;
      for (std::size_t i = 0; i < f.values.size(); ++i)
        maxdiff = std::max(maxdiff, std::abs(f.values[i] - rebuilt.values[i]));

      double total = 0;
      for (const auto& t : dec.terms) total += std::abs(t.lambda);
      *mass = total;
      if (h1) *h1 = h1_norm_estimate(f);

      std::size_t expected = static_cast<std::size_t>(std::ceil(std::log2(D))) + 2;
      return std::make_pair(maxdiff <= 1e-10 * tb.amplitude, dec.terms.size() == expected);
    };

    bool exact = true, counts = true;
    std::vector<double> per_log;
    double h1_16 = 0, h1_256 = 0, massv = 0;
    for (double D : {32.0, 64.0, 128.0}) {
      auto [e, c] = chain_stats(D, &massv, nullptr);
      exact = exact && e;
      counts = counts && c;
      per_log.push_back(massv / std::log2(D));
    }
    {
      auto [e16, c16] = chain_stats(16.0, &massv, &h1_16);
      auto [e256, c256] = chain_stats(256.0, &massv, &h1_256);
      exact = exact && e16 && e256;
      counts = counts && c16 && c256;
    }
    auto [lo, hi] = std::minmax_element(per_log.begin(), per_log.end());
    bool mass_band = *hi / *lo <= 1.35;
    double log_ratio = std::log(256.0) / std::log(16.0);  // = 2
    double h1_ratio = h1_256 / h1_16;
    bool h1_tracks = h1_ratio >= 0.75 * log_ratio && h1_ratio <= 1.25 * log_ratio;

    bool ok = exact && counts && mass_band && h1_tracks;
    report(5, what, ok);
    CHECK(exact);
    CHECK(counts);
    CHECK(mass_band);
    CHECK(h1_tracks);
  } catch (const std::exception& e) {
    report(5, what, false);
    FAIL(std::string("exception: ") + e.what());
  }
}

TEST_CASE("criterion 6") {
  const char* what = "iterated factorization contracts for m=1 and m=2 at M=32";
  try {
    bool ok = true;
    bool converged = true, contraction = true, mass_bound = true, rebuild = true;
    for (int m : {1, 2}) {
      OperatorConfig op = op_for(m, factorization_grid(m, 1, 32, 1.0));
      HAtom atom = make_atom(op.eval_mesh, Ball{Vec(0.0), 1.0}, AtomProfile::dipole);
      FactorExponents exps = default_exponents(m);
      AtomicDecomposition input;
      input.terms.push_back({1.0, atom});

      WeakFactorization res = weak_factorize(op, 1, input, 32.0, exps, 12, 1e-2);

      converged = converged &&
                  res.report.back().residual_h1 <= 1e-2 * res.initial_h1 &&
                  res.report.size() <= 12;
      contraction = contraction && res.measured_rho <= 0.7;
      mass_bound = mass_bound &&
                   res.total_abs_lambda <=
                       res.report[0].sum_abs_lambda / (1.0 - res.measured_rho) + 1e-8;

      GridFn rec = reconstruct(op, res.terms);
      GridFn diff = atom.fn;
      axpy(diff, -1.0, rec);
      // identity: input - sum(lambda Pi) - residual vanishes up to roundoff
      GridFn ident = diff;
      axpy(ident, -1.0, res.residual);
      double linf_in = lp_norm(atom.fn, std::numeric_limits<double>::infinity());
      bool identity = lp_norm(ident, std::numeric_limits<double>::infinity()) <=
                      1e-9 * (1.0 + linf_in);
      // the L1 gap is exactly the carried unfactored mass (atoms have L1 <= 2|lambda|)
      bool l1gap = lp_norm(diff, 1) <= 1e-8 + 2.01 * res.deferred_abs_lambda;
      rebuild = rebuild && identity && l1gap;
    }
    ok = converged && contraction && mass_bound && rebuild;
    report(6, what, ok);
    CHECK(converged);
    CHECK(contraction);
    CHECK(mass_bound);
    CHECK(rebuild);
  } catch (const std::exception& e) {
    report(6, what, false);
    FAIL(std::string("exception: ") + e.what());
  }
}

TEST_CASE("criterion 7") {
  const char* what = "commutator estimate bounds a fixed fraction of the BMO norm";
  try {
    bool lower = true, stable = true;
    for (const char* prof : {"sign", "logabs"}) {
      std::vector<double> cs;
      for (double M : {8.0, 16.0, 32.0}) {
        double half = M + 4.0;
        GridSpec s = spec1d(0, half, static_cast<int>(16 * half));
        OperatorConfig op = op_for(1, s);
        GridFn b = std::string(prof) == "sign" ? sign_fn(s) : logabs_fn(s);
        auto family = build_commutator_family(s, 1, 1, M, 1.0);
        double est = estimate_commutator_norm(op, 1, b, family);
        double bmo = bmo_norm(b);
        cs.push_back(est / bmo);
      }
      auto [lo, hi] = std::minmax_element(cs.begin(), cs.end());
      lower = lower && *lo >= 0.05;
      stable = stable && *hi <= 3.0 * *lo;
    }
    GridSpec s = spec1d(0, 20, 320);
    OperatorConfig op = op_for(1, s);
    GridFn flat = make_grid_fn(s, [](const Vec&) { return 1.0; });
    auto family = build_commutator_family(s, 1, 1, 16, 1.0);
    double est0 = estimate_commutator_norm(op, 1, flat, family);
    bool flat_zero = bmo_norm(flat) <= 1e-10 && est0 <= 1e-10;

    bool ok = lower && stable && flat_zero;
    report(7, what, ok);
    CHECK(lower);
    CHECK(stable);
    CHECK(flat_zero);
  } catch (const std::exception& e) {
    report(7, what, false);
    FAIL(std::string("exception: ") + e.what());
  }
}

TEST_CASE("criterion 8") {
  const char* what = "sampled kernel bounds are stable and the identities hold";
  try {
    bool finite = true, growth_ok = true, ident_ok = true, pair_exact = true;
    for (int m : {1, 2}) {
      KernelDescriptor k = riesz_kernel(m, 1);
      auto tuples = random_tuples(m, 1, 100000, 31000 + m);
      auto size_base = kernel_size_check(k, std::span<const SampleTuple>(tuples.data(), 10000));
      auto size_big = kernel_size_check(k, tuples);
      auto rsamp = random_regularity_samples(m, 1, 100000, 32000 + m);
      auto reg_base =
          kernel_regularity_check(k, std::span<const RegularitySample>(rsamp.data(), 10000));
      auto reg_big = kernel_regularity_check(k, rsamp);

      finite = finite && std::isfinite(size_big.measured_A) && size_big.measured_A > 0 &&
               std::isfinite(reg_big.measured_ratio) && reg_big.measured_ratio > 0;
      growth_ok = growth_ok &&
                  std::abs(size_big.measured_A / size_base.measured_A - 1.0) < 0.05 &&
                  std::abs(reg_big.measured_ratio / reg_base.measured_ratio - 1.0) < 0.05;

      auto id_tuples = random_tuples(m, 1, 1000, 33000 + m);
      std::mt19937_64 rng(34000 + m);
      auto ident = kernel_identity_check(k, id_tuples, rng);
      ident_ok = ident_ok && ident.samples == 1000 && ident.scaling_max < 1e-12 &&
                 ident.translation_max < 1e-12;
      if (m == 1) {
        pair_exact = std::abs(size_big.measured_A - 2.0) <= 1e-12 &&
                     ident.antisymmetry_max == 0.0;
      }
    }
    bool ok = finite && growth_ok && ident_ok && pair_exact;
    report(8, what, ok);
    CHECK(finite);
    CHECK(growth_ok);
    CHECK(ident_ok);
    CHECK(pair_exact);
  } catch (const std::exception& e) {
    report(8, what, false);
    FAIL(std::string("exception: ") + e.what());
  }
}

TEST_CASE("criterion 9") {
  const char* what = "every command writes byte-identical artifacts at workers 1 and 8";
  try {
    fs::path root = fresh_dir("workers");
    fs::path kcfg = root / "kernels.json";
    write_file(kcfg, ordered_json{{"samples", 200}}.dump());
    fs::path dcfg = root / "duality.json";
    write_file(dcfg, ordered_json{{"tuples", 4}}.dump());

    struct Cmd {
      const char* name;
      std::vector<std::string> args;
    };
    std::vector<Cmd> cmds = {
        {"atom-factor", {"atom-factor", "--m", "1", "--M", "32"}},
        {"factorize", {"factorize", "--m", "1", "--M", "32", "--tol", "1e-2"}},
        {"sweep-m", {"sweep-m", "--m", "1", "--M", "16,24,32"}},
        {"check-kernels", {"check-kernels", "--m", "1", "--config", kcfg.string()}},
        {"duality", {"duality", "--m", "1", "--config", dcfg.string()}},
        {"bmo", {"bmo", "--m", "1", "--M", "8", "--b", "sign"}},
    };

    bool all_ok = true;
    for (const Cmd& c : cmds) {
      fs::path o1 = root / (std::string(c.name) + "_w1");
      fs::path o8 = root / (std::string(c.name) + "_w8");
      std::vector<std::string> a1 = c.args, a8 = c.args;
      a1.insert(a1.end(), {"--out", o1.string(), "--workers", "1"});
      a8.insert(a8.end(), {"--out", o8.string(), "--workers", "8"});
      int r1 = run_cli(a1);
      int r8 = run_cli(a8);
      bool same = r1 == exit_ok && r8 == exit_ok && dir_snapshot(o1) == dir_snapshot(o8);
      if (!same) std::printf("  worker variance in command %s\n", c.name);
      all_ok = all_ok && same;
    }
    report(9, what, all_ok);
    CHECK(all_ok);
  } catch (const std::exception& e) {
    report(9, what, false);
    FAIL(std::string("exception: ") + e.what());
  }
}
