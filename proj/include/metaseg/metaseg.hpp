// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "metaseg/autodiff.hpp"
#include "metaseg/errors.hpp"
#include "metaseg/graph.hpp"
#include "metaseg/harness.hpp"
#include "metaseg/inference.hpp"
#include "metaseg/loss.hpp"
#include "metaseg/metrics.hpp"
#include "metaseg/params.hpp"
#include "metaseg/phantom.hpp"
#include "metaseg/report.hpp"
#include "metaseg/rng.hpp"
#include "metaseg/stats.hpp"
#include "metaseg/tensor.hpp"
#include "metaseg/trainer.hpp"
#include "metaseg/unet.hpp"
#include "metaseg/volume.hpp"
