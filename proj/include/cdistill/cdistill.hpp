#pragma once

// Umbrella header.
#include "cdistill/binary_io.hpp"
#include "cdistill/divergence.hpp"
#include "cdistill/errors.hpp"
#include "cdistill/evaluation.hpp"
#include "cdistill/gradient.hpp"
#include "cdistill/harness.hpp"
#include "cdistill/kv_config.hpp"
#include "cdistill/optimizer.hpp"
#include "cdistill/parallel.hpp"
#include "cdistill/policy.hpp"
#include "cdistill/reward_shaping.hpp"
#include "cdistill/rng.hpp"
#include "cdistill/rollout.hpp"
#include "cdistill/solvers.hpp"
#include "cdistill/table.hpp"
#include "cdistill/tasks.hpp"
#include "cdistill/token_mdp.hpp"
#include "cdistill/trajectory.hpp"
#include "cdistill/verification.hpp"
