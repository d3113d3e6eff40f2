#pragma once

namespace refalign {

inline constexpr const char* kProgramName = "refalign";
inline constexpr const char* kVersion = "0.1.0";

}  // namespace refalign
