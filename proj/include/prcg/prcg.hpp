#pragma once

#include "prcg/config.hpp"
#include "prcg/envs.hpp"
#include "prcg/errors.hpp"
#include "prcg/evaluation.hpp"
#include "prcg/harness.hpp"
#include "prcg/numerics.hpp"
#include "prcg/parallel.hpp"
#include "prcg/ppo.hpp"
#include "prcg/random.hpp"
#include "prcg/rcg.hpp"
