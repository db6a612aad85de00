#pragma once

// Umbrella header for the cfl library.

#include "cfl/aggregation.hpp"
#include "cfl/analysis.hpp"
#include "cfl/core.hpp"
#include "cfl/crypto.hpp"
#include "cfl/experiment.hpp"
#include "cfl/graph.hpp"
#include "cfl/keying.hpp"
#include "cfl/model.hpp"
#include "cfl/report.hpp"
#include "cfl/scenario.hpp"
#include "cfl/simnet.hpp"
#include "cfl/topology.hpp"
#include "cfl/trainer.hpp"
