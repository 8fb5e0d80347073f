#pragma once
// Umbrella header for the whole library.

#include "avey/checkpoint.hpp"
#include "avey/cli.hpp"
#include "avey/common.hpp"
#include "avey/config.hpp"
#include "avey/counters.hpp"
#include "avey/data.hpp"
#include "avey/eval.hpp"
#include "avey/model.hpp"
#include "avey/ranker.hpp"
#include "avey/tensor.hpp"
#include "avey/trainer.hpp"
