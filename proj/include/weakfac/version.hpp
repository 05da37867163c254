#pragma once

namespace wf {

inline constexpr const char* version_string = "weakfac 0.1.0";

}  // namespace wf
