#pragma once

// Reverse-mode automatic differentiation: NArray values, the Tape, the op
// set and the finite-difference checker.

#include "spanedit/gradcheck.hpp"
#include "spanedit/narray.hpp"
#include "spanedit/ops.hpp"
#include "spanedit/tape.hpp"
