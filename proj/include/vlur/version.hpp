#pragma once

namespace vlur {
inline constexpr const char* kVersion = "vlur 0.1.0";
}
