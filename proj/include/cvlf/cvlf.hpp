#pragma once

#include "cvlf/common.hpp"
#include "cvlf/comparison.hpp"
#include "cvlf/lorenz.hpp"
#include "cvlf/lyapunov.hpp"
#include "cvlf/model.hpp"
#include "cvlf/ode.hpp"
#include "cvlf/report.hpp"
#include "cvlf/sampling.hpp"
#include "cvlf/scenario.hpp"
#include "cvlf/sim.hpp"
#include "cvlf/synthesis.hpp"
#include "cvlf/verify.hpp"
