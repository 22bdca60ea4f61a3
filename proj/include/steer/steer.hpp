#pragma once

// Umbrella header.
#include "steer/autouser.hpp"
#include "steer/decision.hpp"
#include "steer/engine.hpp"
#include "steer/feedback.hpp"
#include "steer/history.hpp"
#include "steer/json_io.hpp"
#include "steer/learning.hpp"
#include "steer/operators.hpp"
#include "steer/record.hpp"
#include "steer/report.hpp"
#include "steer/rng.hpp"
#include "steer/selectors.hpp"
#include "steer/service.hpp"
#include "steer/stats.hpp"
#include "steer/surrogate_env.hpp"
