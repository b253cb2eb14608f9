#pragma once

#include "gvb/config.hpp"
#include "gvb/data.hpp"
#include "gvb/estimators.hpp"
#include "gvb/experiment.hpp"
#include "gvb/gaussian.hpp"
#include "gvb/mcmc.hpp"
#include "gvb/metrics.hpp"
#include "gvb/models.hpp"
#include "gvb/optimizer.hpp"
#include "gvb/prior.hpp"
#include "gvb/rng.hpp"
#include "gvb/spd.hpp"
#include "gvb/transforms.hpp"
#include "gvb/types.hpp"
