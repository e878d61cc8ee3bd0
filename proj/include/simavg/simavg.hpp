#pragma once

#include "simavg/bundle.hpp"
#include "simavg/csv.hpp"
#include "simavg/data.hpp"
#include "simavg/errors.hpp"
#include "simavg/estimator.hpp"
#include "simavg/kernel.hpp"
#include "simavg/monte_carlo.hpp"
#include "simavg/optim.hpp"
#include "simavg/parallel.hpp"
#include "simavg/random.hpp"
#include "simavg/runner.hpp"
#include "simavg/screening.hpp"
#include "simavg/weights.hpp"
