// Copyright 2026 The patchforge Authors.
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

// Single include for the library. The CLI layer is separate:
// patchforge/cli/commands.hpp.

#pragma once

#include "patchforge/core/error.hpp"
#include "patchforge/core/memory.hpp"
#include "patchforge/core/ops.hpp"
#include "patchforge/core/parallel.hpp"
#include "patchforge/core/reduce.hpp"
#include "patchforge/core/rng.hpp"
#include "patchforge/core/tensor.hpp"
#include "patchforge/data/augment.hpp"
#include "patchforge/data/corpus.hpp"
#include "patchforge/data/dataset.hpp"
#include "patchforge/data/image.hpp"
#include "patchforge/data/manifest.hpp"
#include "patchforge/data/roi.hpp"
#include "patchforge/data/synth.hpp"
#include "patchforge/model/checkpoint.hpp"
#include "patchforge/model/graph.hpp"
#include "patchforge/model/layers.hpp"
#include "patchforge/model/zoo.hpp"
#include "patchforge/nn/activation.hpp"
#include "patchforge/nn/batch_norm.hpp"
#include "patchforge/nn/concat.hpp"
#include "patchforge/nn/conv.hpp"
#include "patchforge/nn/loss.hpp"
#include "patchforge/nn/pool.hpp"
#include "patchforge/ral/ral.hpp"
#include "patchforge/train/eval.hpp"
#include "patchforge/train/train.hpp"
