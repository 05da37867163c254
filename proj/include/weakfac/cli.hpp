#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "weakfac/errors.hpp"
#include "weakfac/factorize.hpp"
#include "weakfac/grid.hpp"
#include "weakfac/hardy.hpp"
#include "weakfac/homogeneity.hpp"
#include "weakfac/io.hpp"
#include "weakfac/kernels.hpp"
#include "weakfac/operators.hpp"
#include "weakfac/version.hpp"

namespace wf {

// ---- run configuration -----------------------------------------------------------

struct GridOptions {
  int points_per_axis = 0;     // 0 = choose automatically per command
  double padding_factor = 1.0;
};

struct RunConfig {
  int m = 1, n = 1, l = 1, j = 1, i = 1;
  std::vector<double> M{32.0};  // single entry, or an increasing list for sweeps
  double r = 1.0;
  GridOptions grid;
  FactorExponents exponents;    // empty p_h means: use defaults for m
  int max_iters = 12;
  double tol = 1e-2;
  std::uint64_t seed = 12345;
  std::string output_dir = "out";
  int workers = 1;
  std::string b_profile = "sign";  // sign | logabs | const
  int samples = 10000;             // kernel sweep base sample count
  int tuples = 50;                 // duality family size
};

namespace detail {

inline double json_exponent(const ordered_json& v, const char* key) {
  if (v.is_string()) {
    if (v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw config_error(std::string("config key '") + key + "' must be a number or \"inf\"");
  }
  if (!v.is_number()) throw config_error(std::string("config key '") + key + "' must be a number");
  return v.get<double>();
}

template <class T>
T json_as(const ordered_json& v, const char* key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw config_error(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline RunConfig parse_config_json(const ordered_json& doc) {
  if (!doc.is_object()) throw config_error("config root must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : doc.items()) {
    if (key == "m") c.m = detail::json_as<int>(v, "m");
    else if (key == "n") c.n = detail::json_as<int>(v, "n");
    else if (key == "l") c.l = detail::json_as<int>(v, "l");
    else if (key == "j") c.j = detail::json_as<int>(v, "j");
    else if (key == "i") c.i = detail::json_as<int>(v, "i");
    else if (key == "M") {
      c.M.clear();
      if (v.is_array())
        for (const auto& e : v) c.M.push_back(detail::json_as<double>(e, "M"));
      else
        c.M.push_back(detail::json_as<double>(v, "M"));
    } else if (key == "r") c.r = detail::json_as<double>(v, "r");
    else if (key == "grid") {
      if (!v.is_object()) throw config_error("config key 'grid' must be an object");
      for (const auto& [gk, gv] : v.items()) {
        if (gk == "points_per_axis") c.grid.points_per_axis = detail::json_as<int>(gv, "grid.points_per_axis");
        else if (gk == "padding_factor") c.grid.padding_factor = detail::json_as<double>(gv, "grid.padding_factor");
        else throw config_error("unknown config key 'grid." + gk + "'");
      }
    } else if (key == "exponents") {
      if (!v.is_object()) throw config_error("config key 'exponents' must be an object");
      for (const auto& [ek, ev] : v.items()) {
        if (ek == "p") c.exponents.p = detail::json_exponent(ev, "exponents.p");
        else if (ek == "p_g") c.exponents.p_g = detail::json_exponent(ev, "exponents.p_g");
        else if (ek == "p_h") {
          if (!ev.is_array()) throw config_error("config key 'exponents.p_h' must be an array");
          c.exponents.p_h.clear();
          for (const auto& e : ev) c.exponents.p_h.push_back(detail::json_exponent(e, "exponents.p_h"));
        } else throw config_error("unknown config key 'exponents." + ek + "'");
      }
    } else if (key == "max_iters") c.max_iters = detail::json_as<int>(v, "max_iters");
    else if (key == "tol") c.tol = detail::json_as<double>(v, "tol");
    else if (key == "seed") c.seed = detail::json_as<std::uint64_t>(v, "seed");
    else if (key == "output_dir") c.output_dir = detail::json_as<std::string>(v, "output_dir");
    else if (key == "workers") c.workers = detail::json_as<int>(v, "workers");
    else if (key == "b") c.b_profile = detail::json_as<std::string>(v, "b");
    else if (key == "samples") c.samples = detail::json_as<int>(v, "samples");
    else if (key == "tuples") c.tuples = detail::json_as<int>(v, "tuples");
    else throw config_error("unknown config key '" + key + "'");
  }
  return c;
}

inline RunConfig load_config_file(const std::string& path) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config file " + path + " is not valid JSON: " + e.what());
  }
  return parse_config_json(doc);
}

inline FactorExponents resolve_exponents(const RunConfig& c) {
  if (c.exponents.p_h.empty()) return default_exponents(c.m);
  FactorExponents e = c.exponents;
  e.validate(c.m);
  return e;
}

inline void validate_config(const RunConfig& c) {
  if (c.m < 1 || c.m > max_slots)
    throw config_error("m must lie in [1," + std::to_string(max_slots) + "]");
  if (c.n < 1 || c.n > max_dim)
    throw config_error("n must lie in [1," + std::to_string(max_dim) + "]");
  if (c.l < 1 || c.l > c.m) throw config_error("l must lie in [1,m]");
  if (c.j < 1 || c.j > c.m) throw config_error("j must lie in [1,m]");
  if (c.i < 1 || c.i > c.n) throw config_error("i must lie in [1,n]");
  if (c.M.empty()) throw config_error("M must hold at least one value");
  for (double M : c.M)
    if (!(M > 0)) throw config_error("every M must be positive");
  if (!(c.r > 0)) throw config_error("r must be positive");
  if (c.grid.points_per_axis < 0) throw config_error("grid.points_per_axis must be >= 0");
  if (!(c.grid.padding_factor >= 1)) throw config_error("grid.padding_factor must be >= 1");
  if (c.max_iters < 1) throw config_error("max_iters must be >= 1");
  if (!(c.tol > 0)) throw config_error("tol must be positive");
  if (c.workers < 1 || c.workers > 64) throw config_error("workers must lie in [1,64]");
  if (c.b_profile != "sign" && c.b_profile != "logabs" && c.b_profile != "const")
    throw config_error("b must be one of: sign, logabs, const");
  if (c.samples < 100) throw config_error("samples must be >= 100");
  if (c.tuples < 1) throw config_error("tuples must be >= 1");
  if (c.output_dir.empty()) throw io_error("output_dir must not be empty");
  resolve_exponents(c);
}

// execution-only knobs (workers, output_dir) are excluded so that reruns at
// different worker counts embed identical configs
inline ordered_json resolved_config_json(const RunConfig& c) {
  FactorExponents e = resolve_exponents(c);
  ordered_json j;
  j["m"] = c.m;
  j["n"] = c.n;
  j["l"] = c.l;
  j["j"] = c.j;
  j["i"] = c.i;
  ordered_json ms = ordered_json::array();
  for (double M : c.M) ms.push_back(M);
  j["M"] = std::move(ms);
  j["r"] = c.r;
  j["grid"] = ordered_json{{"points_per_axis", c.grid.points_per_axis},
                           {"padding_factor", c.grid.padding_factor}};
  ordered_json ph = ordered_json::array();
  for (double q : e.p_h) ph.push_back(q);
  ordered_json je;
  je["p"] = e.p;
  je["p_h"] = std::move(ph);
  if (std::isinf(e.p_g)) je["p_g"] = "inf";
  else je["p_g"] = e.p_g;
  j["exponents"] = std::move(je);
  j["max_iters"] = c.max_iters;
  j["tol"] = c.tol;
  j["seed"] = c.seed;
  j["b"] = c.b_profile;
  j["samples"] = c.samples;
  j["tuples"] = c.tuples;
  return j;
}

// ---- grids per command -------------------------------------------------------------

inline GridSpec master_grid_for_factor(const RunConfig& c, double Mmax) {
  GridSpec spec = factorization_grid(c.m, c.n, Mmax, c.r, 8, c.grid.padding_factor);
  if (c.grid.points_per_axis > 0) {
    spec.points_per_axis = c.grid.points_per_axis;
    if (2.0 * c.r / spec.spacing() < 8.0 - 1e-9) {
      int need = static_cast<int>(std::ceil(8.0 * spec.box.half_width[0] / c.r));
      throw config_error("grid.points_per_axis too coarse to resolve r; need >= " +
                         std::to_string(need) + " on this box (or 0 for automatic)");
    }
    spec.validate();
  }
  return spec;
}

inline GridSpec centered_grid(int n, double half, int N) {
  Box box;
  box.center.n = n;
  box.half_width.n = n;
  for (int a = 0; a < n; ++a) {
    box.center[a] = 0;
    box.half_width[a] = half;
  }
  GridSpec spec{box, N};
  spec.validate();
  return spec;
}

inline GridSpec duality_grid(const RunConfig& c) {
  int N = c.grid.points_per_axis > 0 ? c.grid.points_per_axis : (c.m >= 2 ? 96 : 128);
  return centered_grid(c.n, 4.0 * c.r, N);
}

inline GridSpec bmo_grid(const RunConfig& c, double M) {
  double dx = c.r / 8.0;
  double target = c.m * M * c.r + 4.0 * c.r;
  int k = static_cast<int>(std::ceil(target / dx));
  if (c.grid.points_per_axis > 0) {
    int N = c.grid.points_per_axis;
    return centered_grid(c.n, target, N);
  }
  return centered_grid(c.n, k * dx, 2 * k);
}

// ---- shared pieces -----------------------------------------------------------------

namespace detail {

inline Vec origin_vec(int n) {
  Vec v;
  v.n = n;
  return v;
}

inline OperatorConfig make_operator_config(const RunConfig& c, const GridSpec& spec) {
  OperatorConfig op;
  op.kernel = riesz_kernel(c.m, c.n, c.j, c.i);
  op.eval_mesh = spec;
  op.workers = c.workers;
  return op;
}

inline ordered_json kernel_json(const KernelDescriptor& k) {
  ordered_json j;
  j["family"] = k.family == KernelFamily::riesz ? "riesz" : "custom";
  j["m"] = k.m;
  j["n"] = k.n;
  j["j"] = k.j;
  j["i"] = k.i;
  j["size_constant"] = k.size_constant;
  j["regularity_exponent"] = k.regularity_exponent;
  return j;
}

inline ordered_json manifest_head(const char* command, const RunConfig& c) {
  ordered_json j;
  j["version"] = version_string;
  j["command"] = command;
  j["config"] = resolved_config_json(c);
  return j;
}

inline ordered_json diagnostics_json(const AtomFactorization& af, double error_mean) {
  ordered_json d;
  d["denominator"] = af.denominator;
  d["denominator_constant"] = af.diag.denominator_constant;
  d["c_pt"] = af.diag.c_pt;
  d["h1_error"] = af.diag.h1_error;
  d["norm_product"] = af.diag.norm_product;
  d["norm_product_constant"] = af.diag.norm_product_constant;
  d["snap_distance"] = af.diag.snap_distance;
  d["error_mean"] = error_mean;
  d["error_linf"] = lp_norm(af.error_fn, std::numeric_limits<double>::infinity());
  return d;
}

// deterministic random bump combinations for the duality family
inline GridFn random_bumps(std::mt19937_64& rng, const GridSpec& spec, bool with_offset) {
  std::uniform_real_distribution<double> uamp(-1.0, 1.0);
  double dx = spec.spacing();
  GridFn f = zero_fn(spec);
  for (int bump = 0; bump < 2; ++bump) {
    Vec center;
    center.n = spec.dim();
    for (int a = 0; a < spec.dim(); ++a) {
      double hw = spec.box.half_width[a];
      std::uniform_real_distribution<double> upos(spec.box.center[a] - 0.5 * hw,
                                                  spec.box.center[a] + 0.5 * hw);
      center[a] = upos(rng);
    }
    std::uniform_real_distribution<double> urad(4.0 * dx, 10.0 * dx);
    double rad = urad(rng);
    double amp = uamp(rng);
    GridFn ind = ball_indicator(Ball{center, rad}, spec);
    axpy(f, amp, ind);
  }
  if (with_offset) {
    double off = uamp(rng);
    for (double& v : f.values) v += off;
  }
  return f;
}

}  // namespace detail

// ---- commands ------------------------------------------------------------------------

inline int cmd_atom_factor(const RunConfig& cfg) {
  if (cfg.M.size() != 1) throw config_error("atom-factor expects a single M");
  if (!(cfg.M[0] > 10)) throw config_error("atom-factor needs M > 10");
  FactorExponents exps = resolve_exponents(cfg);
  GridSpec grid = master_grid_for_factor(cfg, cfg.M[0]);
  OperatorConfig op = detail::make_operator_config(cfg, grid);
  HAtom atom = make_atom(grid, Ball{detail::origin_vec(cfg.n), cfg.r}, AtomProfile::dipole);
  AtomFactorization af = approx_factor_atom(op, cfg.l, atom, cfg.M[0], exps);
  double mean = integrate(af.error_fn);

  std::filesystem::path out(cfg.output_dir);
  ensure_dir(out);
  save_gridfn_file(af.g, out / "g.grid");
  ordered_json files;
  files["g"] = "g.grid";
  ordered_json hrefs = ordered_json::array();
  for (int j = 1; j <= cfg.m; ++j) {
    std::string name = "h_" + std::to_string(j) + ".grid";
    save_gridfn_file(af.hs[static_cast<std::size_t>(j - 1)], out / name);
    hrefs.push_back(name);
  }
  files["h"] = std::move(hrefs);
  save_gridfn_file(af.error_fn, out / "error.grid");
  files["error"] = "error.grid";

  ordered_json man = detail::manifest_head("atom-factor", cfg);
  man["grid"] = json_grid_spec(grid);
  man["kernel"] = detail::kernel_json(op.kernel);
  man["l"] = cfg.l;
  man["M"] = cfg.M[0];
  man["denominator"] = af.denominator;
  man["diagnostics"] = detail::diagnostics_json(af, mean);
  man["files"] = std::move(files);
  write_file(out / "manifest.json", man.dump(2) + "\n");

  ordered_json diag = detail::diagnostics_json(af, mean);
  write_file(out / "diagnostics.json", diag.dump(2) + "\n");

  CsvTable csv;
  csv.header = {"cell"};
  for (int a = 1; a <= cfg.n; ++a) csv.header.push_back("x" + std::to_string(a));
  csv.header.push_back("atom");
  csv.header.push_back("error");
  auto cells = support_cells(atom.fn);
  auto ecells = support_cells(af.error_fn);
  std::vector<std::size_t> rows;
  std::merge(cells.begin(), cells.end(), ecells.begin(), ecells.end(), std::back_inserter(rows));
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  for (std::size_t c : rows) {
    std::vector<std::string> row{std::to_string(c)};
    Vec x = grid.cell_center(c);
    for (int a = 0; a < cfg.n; ++a) row.push_back(fmt_g17(x[a]));
    row.push_back(fmt_g17(atom.fn.values[c]));
    row.push_back(fmt_g17(af.error_fn.values[c]));
    csv.rows.push_back(std::move(row));
  }
  write_file(out / "error_profile.csv", csv.str());
  return exit_ok;
}

inline int cmd_sweep_m(const RunConfig& cfg) {
  if (cfg.M.size() < 3) throw config_error("sweep-m needs an M list of length >= 3");
  for (std::size_t q = 0; q + 1 < cfg.M.size(); ++q)
    if (!(cfg.M[q] < cfg.M[q + 1])) throw config_error("sweep-m needs a strictly increasing M list");
  for (double M : cfg.M)
    if (!(M > 10)) throw config_error("sweep-m needs every M > 10");
  FactorExponents exps = resolve_exponents(cfg);
  GridSpec grid = master_grid_for_factor(cfg, cfg.M.back());
  OperatorConfig op = detail::make_operator_config(cfg, grid);
  HAtom atom = make_atom(grid, Ball{detail::origin_vec(cfg.n), cfg.r}, AtomProfile::dipole);

  CsvTable csv;
  csv.header = {"M", "h1_error", "norm_product", "C_pt", "c_low", "sum_abs_lambda"};
  for (double M : cfg.M) {
    AtomFactorization af = approx_factor_atom(op, cfg.l, atom, M, exps);
    HomogeneityGeometry geom;
    geom.r = cfg.r;
    geom.M = M;
    geom.x0 = detail::origin_vec(cfg.n);
    geom.l = cfg.l;
    double c_low = homogeneity_measure(op.kernel, geom, grid, cfg.workers);
    double sum_abs = 0;
    if (af.error_nonzero) sum_abs = sum_abs_lambda(two_bump_decompose(error_bump(af)));
    csv.rows.push_back({fmt_g17(M), fmt_g17(af.diag.h1_error), fmt_g17(af.diag.norm_product),
                        fmt_g17(af.diag.c_pt), fmt_g17(c_low), fmt_g17(sum_abs)});
  }
  std::filesystem::path out(cfg.output_dir);
  ensure_dir(out);
  write_file(out / "sweep.csv", csv.str());
  ordered_json man = detail::manifest_head("sweep-m", cfg);
  man["grid"] = json_grid_spec(grid);
  man["kernel"] = detail::kernel_json(op.kernel);
  man["rows"] = csv.rows.size();
  man["files"] = ordered_json{{"sweep", "sweep.csv"}};
  write_file(out / "manifest.json", man.dump(2) + "\n");
  return exit_ok;
}

inline int cmd_factorize(const RunConfig& cfg) {
  if (cfg.M.size() != 1) throw config_error("factorize expects a single M");
  if (!(cfg.M[0] > 10)) throw config_error("factorize needs M > 10");
  FactorExponents exps = resolve_exponents(cfg);
  GridSpec grid = master_grid_for_factor(cfg, cfg.M[0]);
  OperatorConfig op = detail::make_operator_config(cfg, grid);
  HAtom atom = make_atom(grid, Ball{detail::origin_vec(cfg.n), cfg.r}, AtomProfile::dipole);
  AtomicDecomposition input;
  input.terms.push_back({1.0, atom});

  WeakFactorization res = weak_factorize(op, cfg.l, input, cfg.M[0], exps, cfg.max_iters, cfg.tol);

  std::filesystem::path out(cfg.output_dir);
  ensure_dir(out);
  ensure_dir(out / "terms");
  save_gridfn_file(atom.fn, out / "input.grid");
  save_gridfn_file(res.residual, out / "residual.grid");

  ordered_json terms = ordered_json::array();
  for (std::size_t t = 0; t < res.terms.size(); ++t) {
    const FactorTerm& ft = res.terms[t];
    char buf[64];
    std::snprintf(buf, sizeof buf, "terms/term_%03zu_g.grid", t);
    save_gridfn_file(ft.g, out / buf);
    ordered_json jt;
    jt["lambda"] = ft.lambda;
    jt["l"] = ft.l;
    jt["g_norm"] = ft.g_norm;
    jt["g"] = buf;
    ordered_json hn = ordered_json::array(), hr = ordered_json::array();
    for (std::size_t q = 0; q < ft.hs.size(); ++q) {
      std::snprintf(buf, sizeof buf, "terms/term_%03zu_h%zu.grid", t, q + 1);
      save_gridfn_file(ft.hs[q], out / buf);
      hr.push_back(buf);
      hn.push_back(ft.h_norms[q]);
    }
    jt["h_norms"] = std::move(hn);
    jt["h"] = std::move(hr);
    terms.push_back(std::move(jt));
  }

  CsvTable conv;
  conv.header = {"k", "sum_abs_lambda", "residual_h1"};
  ordered_json iters = ordered_json::array();
  for (const IterationRecord& rec : res.report) {
    conv.rows.push_back({std::to_string(rec.k), fmt_g17(rec.sum_abs_lambda), fmt_g17(rec.residual_h1)});
    ordered_json ji;
    ji["k"] = rec.k;
    ji["sum_abs_lambda"] = rec.sum_abs_lambda;
    ji["residual_h1"] = rec.residual_h1;
    ji["term_count"] = rec.term_count;
    iters.push_back(std::move(ji));
  }
  write_file(out / "convergence.csv", conv.str());

  ordered_json man = detail::manifest_head("factorize", cfg);
  man["grid"] = json_grid_spec(grid);
  man["kernel"] = detail::kernel_json(op.kernel);
  man["l"] = cfg.l;
  man["M"] = cfg.M[0];
  man["exponents"] = resolved_config_json(cfg)["exponents"];
  man["initial_h1"] = res.initial_h1;
  man["rho_hat"] = res.rho_hat;
  man["measured_rho"] = res.measured_rho;
  man["total_abs_lambda"] = res.total_abs_lambda;
  man["deferred_count"] = res.deferred_count;
  man["deferred_abs_lambda"] = res.deferred_abs_lambda;
  man["iterations"] = std::move(iters);
  man["terms"] = std::move(terms);
  man["files"] = ordered_json{{"input", "input.grid"},
                              {"residual", "residual.grid"},
                              {"convergence", "convergence.csv"}};
  write_file(out / "manifest.json", man.dump(2) + "\n");
  return exit_ok;
}

inline int cmd_check_kernels(const RunConfig& cfg) {
  KernelDescriptor k = riesz_kernel(cfg.m, cfg.n, cfg.j, cfg.i);
  std::size_t base = static_cast<std::size_t>(cfg.samples);
  std::size_t big = base * 10;

  auto tuples = random_tuples(cfg.m, cfg.n, big, cfg.seed);
  auto size_base = kernel_size_check(k, std::span<const SampleTuple>(tuples.data(), base));
  auto size_big = kernel_size_check(k, tuples);

  auto rsamples = random_regularity_samples(cfg.m, cfg.n, big, cfg.seed + 1);
  auto reg_base = kernel_regularity_check(k, std::span<const RegularitySample>(rsamples.data(), base));
  auto reg_big = kernel_regularity_check(k, rsamples);

  auto id_tuples = random_tuples(cfg.m, cfg.n, 1000, cfg.seed + 2);
  std::mt19937_64 idrng(cfg.seed + 3);
  auto ident = kernel_identity_check(k, id_tuples, idrng);

  std::filesystem::path out(cfg.output_dir);
  ensure_dir(out);
  CsvTable csv;
  csv.header = {"samples", "measured_A", "measured_ratio"};
  csv.rows.push_back({std::to_string(base), fmt_g17(size_base.measured_A), fmt_g17(reg_base.measured_ratio)});
  csv.rows.push_back({std::to_string(big), fmt_g17(size_big.measured_A), fmt_g17(reg_big.measured_ratio)});
  write_file(out / "samples.csv", csv.str());

  ordered_json man = detail::manifest_head("check-kernels", cfg);
  man["kernel"] = detail::kernel_json(k);
  man["size"] = ordered_json{{"measured_A_base", size_base.measured_A},
                             {"measured_A_10x", size_big.measured_A},
                             {"growth", size_base.measured_A > 0
                                            ? size_big.measured_A / size_base.measured_A - 1.0
                                            : 0.0},
                             {"skipped", size_big.skipped}};
  man["regularity"] = ordered_json{{"measured_ratio_base", reg_base.measured_ratio},
                                   {"measured_ratio_10x", reg_big.measured_ratio},
                                   {"growth", reg_base.measured_ratio > 0
                                                  ? reg_big.measured_ratio / reg_base.measured_ratio - 1.0
                                                  : 0.0},
                                   {"rejected", reg_big.rejected}};
  man["identities"] = ordered_json{{"scaling_max", ident.scaling_max},
                                   {"translation_max", ident.translation_max},
                                   {"antisymmetry_max", ident.antisymmetry_max},
                                   {"samples", ident.samples}};
  man["files"] = ordered_json{{"samples", "samples.csv"}};
  write_file(out / "manifest.json", man.dump(2) + "\n");
  return exit_ok;
}

inline int cmd_duality(const RunConfig& cfg) {
  GridSpec grid = duality_grid(cfg);
  OperatorConfig op = detail::make_operator_config(cfg, grid);
  std::mt19937_64 rng(cfg.seed);

  CsvTable csv;
  csv.header = {"tuple", "defect_mean", "defect_pairing", "norm_product"};
  double max_mean = 0, max_pair = 0, max_norm = 0;
  for (int t = 0; t < cfg.tuples; ++t) {
    GridFn g = detail::random_bumps(rng, grid, false);
    std::vector<GridFn> hs;
    for (int q = 0; q < cfg.m; ++q) hs.push_back(detail::random_bumps(rng, grid, false));
    GridFn b = detail::random_bumps(rng, grid, true);

    GridFn pi = pi_apply(op, cfg.l, g, hs);
    double dmean = std::abs(integrate(pi));
    double lhs = inner_product(b, pi);
    auto gcells = support_cells(g);
    GridFn comm = commutator_apply_at(op, cfg.l, b, hs, gcells);
    double rhs = inner_product(g, comm);
    double dpair = std::abs(lhs - rhs);
    double np = lp_norm(b, 2) * lp_norm(g, 2);
    for (const GridFn& h : hs) np *= lp_norm(h, 2);

    max_mean = std::max(max_mean, dmean);
    max_pair = std::max(max_pair, dpair);
    max_norm = std::max(max_norm, np);
    csv.rows.push_back({std::to_string(t), fmt_g17(dmean), fmt_g17(dpair), fmt_g17(np)});
  }

  std::filesystem::path out(cfg.output_dir);
  ensure_dir(out);
  write_file(out / "tuples.csv", csv.str());
  ordered_json man = detail::manifest_head("duality", cfg);
  man["grid"] = json_grid_spec(grid);
  man["kernel"] = detail::kernel_json(op.kernel);
  man["l"] = cfg.l;
  man["max_defect_mean"] = max_mean;
  man["max_defect_pairing"] = max_pair;
  man["max_norm_product"] = max_norm;
  man["files"] = ordered_json{{"tuples", "tuples.csv"}};
  write_file(out / "manifest.json", man.dump(2) + "\n");
  return exit_ok;
}

inline int cmd_bmo(const RunConfig& cfg) {
  if (cfg.M.size() != 1) throw config_error("bmo expects a single M");
  if (!(cfg.M[0] >= 2)) throw config_error("bmo needs M >= 2");
  GridSpec grid = bmo_grid(cfg, cfg.M[0]);
  OperatorConfig op = detail::make_operator_config(cfg, grid);

  GridFn b = zero_fn(grid);
  if (cfg.b_profile == "sign") b = sign_fn(grid);
  else if (cfg.b_profile == "logabs") b = logabs_fn(grid);
  else b = make_grid_fn(grid, [](const Vec&) { return 1.0; });

  auto family = build_commutator_family(grid, cfg.m, cfg.l, cfg.M[0], cfg.r);
  CommutatorEstimateStats stats;
  double est = estimate_commutator_norm(op, cfg.l, b, family, &stats);
  double bmo = bmo_norm(b);
  double ratio = bmo > 0 ? est / bmo : 0.0;

  std::filesystem::path out(cfg.output_dir);
  ensure_dir(out);
  CsvTable csv;
  csv.header = {"tuple", "value"};
  for (std::size_t t = 0; t < stats.per_tuple.size(); ++t)
    csv.rows.push_back({std::to_string(t), fmt_g17(stats.per_tuple[t])});
  write_file(out / "tuples.csv", csv.str());

  ordered_json man = detail::manifest_head("bmo", cfg);
  man["grid"] = json_grid_spec(grid);
  man["kernel"] = detail::kernel_json(op.kernel);
  man["b_profile"] = cfg.b_profile;
  man["bmo_norm"] = bmo;
  man["commutator_estimate"] = est;
  man["ratio"] = ratio;
  man["family_size"] = family.size();
  man["skipped"] = stats.skipped;
  man["files"] = ordered_json{{"tuples", "tuples.csv"}};
  write_file(out / "manifest.json", man.dump(2) + "\n");
  return exit_ok;
}

// ---- dispatch ------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"desk-scale weak factorization toolkit"};
  app.require_subcommand(1);

  std::optional<std::string> config_path, out_dir, Mspec, bprof;
  std::optional<int> m, n, l, workers, max_iters;
  std::optional<double> r, tol;
  std::optional<std::uint64_t> seed;

  const char* names[] = {"atom-factor", "factorize", "sweep-m", "check-kernels", "duality", "bmo"};
  const char* descs[] = {"factor one atom and report the error diagnostics",
                         "run the full iterated factorization of one atom",
                         "sweep M and tabulate the decay diagnostics",
                         "verify kernel size/regularity bounds and identities",
                         "measure the discrete duality defects on random tuples",
                         "compare the commutator estimate against the BMO norm"};
  for (int q = 0; q < 6; ++q) {
    CLI::App* sc = app.add_subcommand(names[q], descs[q]);
    sc->add_option("--config", config_path, "JSON config file (flags win over file values)");
    sc->add_option("--out", out_dir, "output directory");
    sc->add_option("--workers", workers, "worker threads (results are worker-count invariant)");
    sc->add_option("--seed", seed, "seed for all randomized families");
    sc->add_option("--m", m, "kernel linearity");
    sc->add_option("--n", n, "space dimension");
    sc->add_option("--l", l, "distinguished slot");
    sc->add_option("--M", Mspec, "separation scale, or comma list for sweeps");
    sc->add_option("--r", r, "ball radius");
    sc->add_option("--tol", tol, "relative residual target");
    sc->add_option("--max-iters", max_iters, "iteration cap");
    sc->add_option("--b", bprof, "bmo symbol profile: sign | logabs | const");
  }

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  }

  try {
    RunConfig cfg;
    if (config_path) cfg = load_config_file(*config_path);
    if (out_dir) cfg.output_dir = *out_dir;
    if (workers) cfg.workers = *workers;
    if (seed) cfg.seed = *seed;
    if (m) cfg.m = *m;
    if (n) cfg.n = *n;
    if (l) cfg.l = *l;
    if (r) cfg.r = *r;
    if (tol) cfg.tol = *tol;
    if (max_iters) cfg.max_iters = *max_iters;
    if (bprof) cfg.b_profile = *bprof;
    if (Mspec) {
      cfg.M.clear();
      std::string s = *Mspec;
      std::size_t pos = 0;
      while (pos <= s.size()) {
        std::size_t comma = s.find(',', pos);
        std::string piece = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
          std::size_t used = 0;
          double v = std::stod(piece, &used);
          if (used != piece.size()) throw std::invalid_argument(piece);
          cfg.M.push_back(v);
        } catch (const std::exception&) {
          throw config_error("--M expects a number or comma list, got '" + piece + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    }
    validate_config(cfg);

    std::string cmd = app.get_subcommands().at(0)->get_name();
    if (cmd == "atom-factor") return cmd_atom_factor(cfg);
    if (cmd == "factorize") return cmd_factorize(cfg);
    if (cmd == "sweep-m") return cmd_sweep_m(cfg);
    if (cmd == "check-kernels") return cmd_check_kernels(cfg);
    if (cmd == "duality") return cmd_duality(cfg);
    return cmd_bmo(cfg);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const non_contraction_error& e) {
    std::cerr << "non-contraction: " << e.what() << "\n";
    return exit_non_contraction;
  } catch (const degeneracy_error& e) {
    std::cerr << "degeneracy: " << e.what() << "\n";
    return exit_degeneracy;
  } catch (const io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return exit_io;
  } catch (const precondition_error& e) {
    std::cerr << "precondition: " << e.what() << "\n";
    return exit_precondition;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_failure;
  }
}

}  // namespace wf
