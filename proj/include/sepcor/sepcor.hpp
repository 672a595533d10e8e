#pragma once

// Convenience umbrella: maximum likelihood estimation of multivariate normal
// covariance with a Kronecker separable correlation structure, plus the
// separable covariance and unrestricted baselines, parametric bootstrap
// separability tests, and Monte-Carlo scenario tooling.

#include "sepcor/csv.hpp"
#include "sepcor/inference.hpp"
#include "sepcor/log.hpp"
#include "sepcor/matrix_kit.hpp"
#include "sepcor/model.hpp"
#include "sepcor/parallel.hpp"
#include "sepcor/rng.hpp"
#include "sepcor/simulation.hpp"
#include "sepcor/solver.hpp"
