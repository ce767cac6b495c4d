// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "distillkit/analysis.hpp"
#include "distillkit/checkpoint.hpp"
#include "distillkit/config.hpp"
#include "distillkit/data.hpp"
#include "distillkit/distill.hpp"
#include "distillkit/errors.hpp"
#include "distillkit/fd_check.hpp"
#include "distillkit/model.hpp"
#include "distillkit/ops.hpp"
#include "distillkit/rng.hpp"
#include "distillkit/tensor.hpp"
#include "distillkit/train.hpp"
#include "distillkit/version.hpp"
