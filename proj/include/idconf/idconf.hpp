// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "idconf/calibration.hpp"
#include "idconf/dataset.hpp"
#include "idconf/errors.hpp"
#include "idconf/forest.hpp"
#include "idconf/metrics.hpp"
#include "idconf/parallel.hpp"
#include "idconf/perm_engine.hpp"
#include "idconf/report.hpp"
#include "idconf/rng.hpp"
#include "idconf/simgen.hpp"
#include "idconf/splits.hpp"
