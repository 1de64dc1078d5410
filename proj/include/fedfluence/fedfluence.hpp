#pragma once

// Umbrella header for the whole library.

#include "fedfluence/checkpoint.hpp"
#include "fedfluence/data.hpp"
#include "fedfluence/errors.hpp"
#include "fedfluence/experiment_config.hpp"
#include "fedfluence/experiments.hpp"
#include "fedfluence/fedavg.hpp"
#include "fedfluence/influence.hpp"
#include "fedfluence/layered.hpp"
#include "fedfluence/linalg.hpp"
#include "fedfluence/metrics.hpp"
#include "fedfluence/model.hpp"
#include "fedfluence/oracle.hpp"
#include "fedfluence/parallel.hpp"
#include "fedfluence/presets.hpp"
#include "fedfluence/rng.hpp"
#include "fedfluence/verify.hpp"
