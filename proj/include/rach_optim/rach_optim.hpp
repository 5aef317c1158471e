#pragma once

#include "activity.hpp"
#include "barrier.hpp"
#include "baselines.hpp"
#include "bcd.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "numeric.hpp"
#include "policy.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "robust.hpp"
#include "roots.hpp"
#include "simulator.hpp"
#include "stochastic.hpp"
#include "throughput.hpp"
