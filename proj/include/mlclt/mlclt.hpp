#pragma once

#include "mlclt/concentration.hpp"
#include "mlclt/distance.hpp"
#include "mlclt/error.hpp"
#include "mlclt/experiment.hpp"
#include "mlclt/fields.hpp"
#include "mlclt/format.hpp"
#include "mlclt/gaussian.hpp"
#include "mlclt/linalg.hpp"
#include "mlclt/multilevel.hpp"
#include "mlclt/parallel.hpp"
#include "mlclt/quadrature.hpp"
#include "mlclt/rng.hpp"
#include "mlclt/special.hpp"
#include "mlclt/stein.hpp"
