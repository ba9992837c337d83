// Umbrella header.
#pragma once

#include "driftpfn/benchmarks.hpp"
#include "driftpfn/evaluation.hpp"
#include "driftpfn/metrics.hpp"
#include "driftpfn/model.hpp"
#include "driftpfn/prior.hpp"
#include "driftpfn/scm.hpp"
#include "driftpfn/shift_witnesses.hpp"
#include "driftpfn/time2vec.hpp"
#include "driftpfn/train.hpp"
