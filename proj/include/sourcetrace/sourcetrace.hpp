// Copyright 2026  Sourcetrace Authors
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

// Umbrella header: the whole library.

#include "sourcetrace/adam.hpp"
#include "sourcetrace/backends.hpp"
#include "sourcetrace/embedding_store.hpp"
#include "sourcetrace/error.hpp"
#include "sourcetrace/experiment.hpp"
#include "sourcetrace/fingerprint.hpp"
#include "sourcetrace/gradcheck.hpp"
#include "sourcetrace/linalg.hpp"
#include "sourcetrace/losses.hpp"
#include "sourcetrace/metrics.hpp"
#include "sourcetrace/model_io.hpp"
#include "sourcetrace/nn.hpp"
#include "sourcetrace/protocol.hpp"
#include "sourcetrace/rng.hpp"
#include "sourcetrace/synthgen.hpp"
#include "sourcetrace/text_io.hpp"
