#pragma once

#include "assignment.hpp"
#include "brownian.hpp"
#include "config.hpp"
#include "decomp.hpp"
#include "experiments.hpp"
#include "grid.hpp"
#include "maps.hpp"
#include "orbit.hpp"
#include "parallel.hpp"
#include "process.hpp"
#include "rng.hpp"
#include "transfer.hpp"
#include "wasserstein.hpp"
