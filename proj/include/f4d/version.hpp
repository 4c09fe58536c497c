#pragma once

namespace f4d {
inline constexpr const char* kVersion = "0.1.0";
}
