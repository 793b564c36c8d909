#pragma once

namespace bytegen {

inline constexpr const char* kName = "bytegen";
inline constexpr const char* kVersion = "0.1.0";

}  // namespace bytegen
