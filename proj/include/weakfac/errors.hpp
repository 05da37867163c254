#pragma once

#include <stdexcept>
#include <string>

namespace wf {

// Error taxonomy maps 1:1 onto CLI exit codes; keep the hierarchy flat.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

struct precondition_error : std::runtime_error {
  explicit precondition_error(const std::string& what) : std::runtime_error(what) {}
};

struct non_contraction_error : std::runtime_error {
  explicit non_contraction_error(const std::string& what) : std::runtime_error(what) {}
};

struct degeneracy_error : std::runtime_error {
  explicit degeneracy_error(const std::string& what) : std::runtime_error(what) {}
};

struct io_error : std::runtime_error {
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

enum exit_code {
  exit_ok = 0,
  exit_failure = 1,
  exit_config = 2,
  exit_precondition = 3,
  exit_non_contraction = 4,
  exit_degeneracy = 5,
  exit_io = 6,
};

}  // namespace wf
