#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "weakfac/errors.hpp"
#include "weakfac/grid.hpp"
#include "weakfac/hardy.hpp"

namespace wf {

using ordered_json = nlohmann::ordered_json;

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw io_error("cannot create output directory " + dir.string() +
                   (ec ? ": " + ec.message() : ""));
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw io_error("short write to " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---- json helpers --------------------------------------------------------------

inline ordered_json json_vec(const Vec& v) {
  ordered_json a = ordered_json::array();
  for (int q = 0; q < v.n; ++q) a.push_back(v[q]);
  return a;
}

inline ordered_json json_grid_spec(const GridSpec& spec) {
  ordered_json j;
  j["n"] = spec.dim();
  j["points_per_axis"] = spec.points_per_axis;
  j["center"] = json_vec(spec.box.center);
  j["half_width"] = json_vec(spec.box.half_width);
  j["spacing"] = spec.spacing();
  return j;
}

inline ordered_json json_ball(const Ball& b) {
  ordered_json j;
  j["center"] = json_vec(b.center);
  j["radius"] = b.radius;
  return j;
}

// ---- csv (RFC 4180: quoted fields where needed, CRLF line ends) ------------------

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string str() const {
    std::string out;
    auto emit = [&out](const std::vector<std::string>& fields) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_field(fields[i]);
      }
      out += "\r\n";
    };
    emit(header);
    for (const auto& r : rows) emit(r);
    return out;
  }
};

// ---- gridfn and decomposition artifacts -----------------------------------------

inline std::string gridfn_to_text(const GridFn& f) {
  std::ostringstream ss;
  save_gridfn_text(f, ss);
  return ss.str();
}

inline void save_gridfn_file(const GridFn& f, const std::filesystem::path& path) {
  write_file(path, gridfn_to_text(f));
}

inline GridFn load_gridfn_file(const std::filesystem::path& path) {
  std::istringstream ss(read_file(path));
  return load_gridfn_text(ss);
}

// Writes one .grid file per atom next to the manifest and returns the manifest
// json {terms: [{lambda, ball, values_ref}]}.
inline ordered_json save_decomposition(const AtomicDecomposition& dec,
                                       const std::filesystem::path& dir,
                                       const std::string& base) {
  ensure_dir(dir);
  ordered_json j;
  j["term_count"] = dec.terms.size();
  j["sum_abs_lambda"] = sum_abs_lambda(dec);
  ordered_json terms = ordered_json::array();
  for (std::size_t i = 0; i < dec.terms.size(); ++i) {
    const auto& t = dec.terms[i];
    char name[64];
    std::snprintf(name, sizeof name, "%s_atom_%03zu.grid", base.c_str(), i);
    save_gridfn_file(t.atom.fn, dir / name);
    ordered_json jt;
    jt["lambda"] = t.lambda;
    jt["ball"] = json_ball(t.atom.ball);
    jt["values_ref"] = name;
    terms.push_back(std::move(jt));
  }
  j["terms"] = std::move(terms);
  write_file(dir / (base + ".json"), j.dump(2) + "\n");
  return j;
}

}  // namespace wf
