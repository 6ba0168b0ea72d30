#pragma once

namespace ncodid {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ncodid
