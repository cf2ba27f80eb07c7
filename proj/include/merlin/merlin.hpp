// Copyright (c) 2026 The merlin-despeckle Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "merlin/autodiff.hpp"
#include "merlin/despeckle.hpp"
#include "merlin/error.hpp"
#include "merlin/eval.hpp"
#include "merlin/fft.hpp"
#include "merlin/image.hpp"
#include "merlin/losses.hpp"
#include "merlin/optim.hpp"
#include "merlin/raster_io.hpp"
#include "merlin/rng.hpp"
#include "merlin/speckle_sim.hpp"
#include "merlin/spectrum_prep.hpp"
#include "merlin/stats.hpp"
#include "merlin/train.hpp"
#include "merlin/transfer_json.hpp"
#include "merlin/unet.hpp"
