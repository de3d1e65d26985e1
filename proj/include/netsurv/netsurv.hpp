#pragma once

#include "netsurv/cohort.hpp"
#include "netsurv/copula.hpp"
#include "netsurv/estimator.hpp"
#include "netsurv/inference.hpp"
#include "netsurv/lifetable.hpp"
#include "netsurv/rng.hpp"
#include "netsurv/simulation.hpp"
