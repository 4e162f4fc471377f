#pragma once

namespace levsq {

inline constexpr const char* version = "0.1.0";

} // namespace levsq
