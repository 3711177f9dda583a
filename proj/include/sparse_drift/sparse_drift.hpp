#pragma once

#include "sparse_drift/error.hpp"
#include "sparse_drift/rng.hpp"
#include "sparse_drift/model.hpp"
#include "sparse_drift/model_json.hpp"
#include "sparse_drift/simulate.hpp"
#include "sparse_drift/qlik.hpp"
#include "sparse_drift/simplex.hpp"
#include "sparse_drift/dantzig.hpp"
#include "sparse_drift/select_refit.hpp"
#include "sparse_drift/cone_factors.hpp"
#include "sparse_drift/normality.hpp"
#include "sparse_drift/experiment.hpp"
