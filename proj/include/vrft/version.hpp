#pragma once

namespace vrft {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace vrft
