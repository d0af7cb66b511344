#ifndef MIXCASCADE_MIXCASCADE_HPP
#define MIXCASCADE_MIXCASCADE_HPP

#include "config.hpp"
#include "controller.hpp"
#include "error.hpp"
#include "field.hpp"
#include "integrator.hpp"
#include "lattice.hpp"
#include "pde_bridge.hpp"
#include "pipeline.hpp"
#include "planner.hpp"
#include "shear.hpp"
#include "spectrum.hpp"
#include "state.hpp"

#endif
