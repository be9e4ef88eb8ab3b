#pragma once

namespace mfc {

inline constexpr const char* kVersion = "mfc-v0.1.0";

}  // namespace mfc
