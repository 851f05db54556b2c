#pragma once

// Umbrella header for the photostat photon-statistics toolkit.

#include "photostat/cluster.hpp"
#include "photostat/correlate.hpp"
#include "photostat/errors.hpp"
#include "photostat/eventstream.hpp"
#include "photostat/pnr.hpp"
#include "photostat/rng.hpp"
#include "photostat/simulate.hpp"
#include "photostat/threading.hpp"
#include "photostat/timewalk.hpp"
