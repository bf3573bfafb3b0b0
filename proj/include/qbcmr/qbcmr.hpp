#pragma once

#include "qbcmr/core.hpp"
#include "qbcmr/kmeans.hpp"
#include "qbcmr/basis.hpp"
#include "qbcmr/gp_prior.hpp"
#include "qbcmr/residuals.hpp"
#include "qbcmr/quasi_posterior.hpp"
#include "qbcmr/sampler.hpp"
#include "qbcmr/dgp.hpp"
#include "qbcmr/harness.hpp"
