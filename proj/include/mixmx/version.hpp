// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace mixmx {

inline constexpr const char* kToolName = "mixmx";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace mixmx
