#pragma once

#include "mrguide/axis_sim.hpp"
#include "mrguide/config.hpp"
#include "mrguide/errors.hpp"
#include "mrguide/eval_harness.hpp"
#include "mrguide/geometry.hpp"
#include "mrguide/kinematics.hpp"
#include "mrguide/mesh.hpp"
#include "mrguide/motion_planner.hpp"
#include "mrguide/random.hpp"
#include "mrguide/workspace.hpp"
