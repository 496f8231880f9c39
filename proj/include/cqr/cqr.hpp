#pragma once

// Umbrella header for the censored quantile-curve comparison library.

#include "cqr/bootstrap.hpp"
#include "cqr/dgp.hpp"
#include "cqr/io.hpp"
#include "cqr/l1_solver.hpp"
#include "cqr/parallel.hpp"
#include "cqr/peng_huang.hpp"
#include "cqr/rng.hpp"
#include "cqr/simulate.hpp"
#include "cqr/test_stats.hpp"
#include "cqr/types.hpp"
