// Copyright 2026 The SDQ Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "sdq/analysis.hpp"
#include "sdq/engine.hpp"
#include "sdq/errors.hpp"
#include "sdq/hadamard.hpp"
#include "sdq/hessian.hpp"
#include "sdq/inference.hpp"
#include "sdq/osr_planner.hpp"
#include "sdq/quantizers.hpp"
#include "sdq/resampler.hpp"
#include "sdq/sigma_delta.hpp"
#include "sdq/tensor_io.hpp"
