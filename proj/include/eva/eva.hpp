#pragma once

#include "eva/aggregate.hpp"
#include "eva/config.hpp"
#include "eva/error.hpp"
#include "eva/fixtures.hpp"
#include "eva/judge.hpp"
#include "eva/log_model.hpp"
#include "eva/metric_outcome.hpp"
#include "eva/metrics.hpp"
#include "eva/reconcile.hpp"
#include "eva/rng.hpp"
#include "eva/scenario_store.hpp"
#include "eva/stats.hpp"
#include "eva/trial.hpp"
#include "eva/turn_taking.hpp"
