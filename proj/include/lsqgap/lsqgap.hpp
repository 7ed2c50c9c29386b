#pragma once

#include "lsqgap/diagnostics.hpp"
#include "lsqgap/distributions.hpp"
#include "lsqgap/errors.hpp"
#include "lsqgap/estimators.hpp"
#include "lsqgap/harness.hpp"
#include "lsqgap/linalg.hpp"
#include "lsqgap/rng.hpp"
