#pragma once

namespace wlm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace wlm
