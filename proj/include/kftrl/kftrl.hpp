#pragma once

#include "kftrl/environments.hpp"
#include "kftrl/harness.hpp"
#include "kftrl/io.hpp"
#include "kftrl/kgr.hpp"
#include "kftrl/kgr_audit.hpp"
#include "kftrl/log_barrier_ftrl.hpp"
#include "kftrl/mercer_kernel.hpp"
#include "kftrl/resample_block.hpp"
#include "kftrl/rng.hpp"
#include "kftrl/stats.hpp"
