#pragma once

namespace depthprobe {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace depthprobe
