#pragma once

namespace fedlith {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fedlith
