#pragma once

#include "stancekit/config.hpp"
#include "stancekit/core.hpp"
#include "stancekit/digest.hpp"
#include "stancekit/errors.hpp"
#include "stancekit/gateway.hpp"
#include "stancekit/ingest.hpp"
#include "stancekit/metrics.hpp"
#include "stancekit/normalize.hpp"
#include "stancekit/prompt.hpp"
#include "stancekit/runner.hpp"
