#pragma once

namespace seqcon {
inline constexpr const char* kVersion = "0.1.0";
}
