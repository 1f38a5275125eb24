#pragma once

#include "c2fnas/arch_builder.hpp"
#include "c2fnas/cache.hpp"
#include "c2fnas/clustering.hpp"
#include "c2fnas/coarse_evolution.hpp"
#include "c2fnas/errors.hpp"
#include "c2fnas/evaluation.hpp"
#include "c2fnas/external_evaluator.hpp"
#include "c2fnas/fine_search.hpp"
#include "c2fnas/operations.hpp"
#include "c2fnas/rng.hpp"
#include "c2fnas/run_config.hpp"
#include "c2fnas/topology.hpp"
