// Copyright 2026 The cmtl Authors.
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

#include "cmtl/cascade_loss.hpp"
#include "cmtl/checkpoint.hpp"
#include "cmtl/data_pipeline.hpp"
#include "cmtl/errors.hpp"
#include "cmtl/evaluate.hpp"
#include "cmtl/gradient_check.hpp"
#include "cmtl/ground_truth.hpp"
#include "cmtl/image_io.hpp"
#include "cmtl/layers.hpp"
#include "cmtl/model.hpp"
#include "cmtl/objectives.hpp"
#include "cmtl/parallel.hpp"
#include "cmtl/pipeline.hpp"
#include "cmtl/render.hpp"
#include "cmtl/tensor.hpp"
#include "cmtl/train.hpp"
