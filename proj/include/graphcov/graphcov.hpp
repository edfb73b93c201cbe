#pragma once

// Convenience header pulling in the whole library.

#include "graphcov/covariance.hpp"
#include "graphcov/errors.hpp"
#include "graphcov/experiments.hpp"
#include "graphcov/fit.hpp"
#include "graphcov/graph.hpp"
#include "graphcov/io.hpp"
#include "graphcov/likelihood.hpp"
#include "graphcov/mala.hpp"
#include "graphcov/matern.hpp"
#include "graphcov/models.hpp"
#include "graphcov/report.hpp"
#include "graphcov/rng.hpp"
#include "graphcov/spectral_basis.hpp"
