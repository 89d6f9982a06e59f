#pragma once

#include "enkfml/dynamics.hpp"
#include "enkfml/ensemble.hpp"
#include "enkfml/errors.hpp"
#include "enkfml/filters_global.hpp"
#include "enkfml/filters_iterative.hpp"
#include "enkfml/filters_local.hpp"
#include "enkfml/harness/config.hpp"
#include "enkfml/harness/csv.hpp"
#include "enkfml/harness/experiment.hpp"
#include "enkfml/harness/pool.hpp"
#include "enkfml/harness/power_law.hpp"
#include "enkfml/harness/sweep.hpp"
#include "enkfml/linalg.hpp"
#include "enkfml/lyapunov.hpp"
#include "enkfml/random.hpp"
#include "enkfml/surrogate.hpp"
