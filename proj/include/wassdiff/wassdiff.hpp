#pragma once

// Umbrella header for the whole library.

#include "bounds.hpp"
#include "config.hpp"
#include "error.hpp"
#include "explosion.hpp"
#include "io.hpp"
#include "numeric.hpp"
#include "plot.hpp"
#include "rng.hpp"
#include "samplers.hpp"
#include "score.hpp"
#include "studies.hpp"
#include "target.hpp"
#include "transport.hpp"
