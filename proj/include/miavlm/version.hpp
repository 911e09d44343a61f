#pragma once

namespace miavlm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace miavlm
