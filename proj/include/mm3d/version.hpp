// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace mm3d {

inline constexpr const char* kVersion = "0.1.0";

} // namespace mm3d
