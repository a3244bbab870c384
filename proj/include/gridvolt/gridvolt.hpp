#pragma once

#include "gridvolt/core.hpp"
#include "gridvolt/netmodel.hpp"
#include "gridvolt/pfsolve.hpp"
#include "gridvolt/linmodel.hpp"
#include "gridvolt/controllers.hpp"
#include "gridvolt/qcqp.hpp"
#include "gridvolt/cicopt.hpp"
#include "gridvolt/profiles.hpp"
#include "gridvolt/scenario.hpp"
#include "gridvolt/simulate.hpp"
#include "gridvolt/sweep.hpp"
#include "gridvolt/report.hpp"
