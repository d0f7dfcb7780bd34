#pragma once

namespace sensiq {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sensiq
