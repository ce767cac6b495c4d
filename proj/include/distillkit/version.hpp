// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace distillkit {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace distillkit
