#pragma once

#include "errors.hpp"
#include "splines.hpp"
#include "model.hpp"
#include "levelset.hpp"
#include "assembly.hpp"
#include "objectives.hpp"
#include "oracle.hpp"
#include "optimizer.hpp"
#include "topology.hpp"
#include "config.hpp"
#include "io.hpp"
#include "studies.hpp"
