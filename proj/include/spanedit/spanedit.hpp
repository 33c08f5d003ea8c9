#pragma once

#include "spanedit/actions.hpp"
#include "spanedit/autodiff.hpp"
#include "spanedit/checkpoint.hpp"
#include "spanedit/config.hpp"
#include "spanedit/corpus.hpp"
#include "spanedit/errors.hpp"
#include "spanedit/metrics.hpp"
#include "spanedit/model.hpp"
#include "spanedit/objective.hpp"
#include "spanedit/oracle.hpp"
#include "spanedit/rng.hpp"
#include "spanedit/search.hpp"
#include "spanedit/train.hpp"
