#pragma once

#include "mnat/common.hpp"
#include "mnat/rng.hpp"
#include "mnat/game.hpp"
#include "mnat/measures.hpp"
#include "mnat/sampler.hpp"
#include "mnat/eval.hpp"
#include "mnat/parallel.hpp"
#include "mnat/solver.hpp"
#include "mnat/io.hpp"
#include "mnat/harness.hpp"
