#pragma once

namespace icalign {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace icalign
