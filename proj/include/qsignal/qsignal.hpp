#pragma once

#include "qsignal/error.hpp"
#include "qsignal/csv.hpp"
#include "qsignal/random.hpp"
#include "qsignal/flowmodel.hpp"
#include "qsignal/dpmm.hpp"
#include "qsignal/tracklets.hpp"
#include "qsignal/rates.hpp"
#include "qsignal/predictor.hpp"
#include "qsignal/simulator.hpp"
#include "qsignal/gof.hpp"
#include "qsignal/pipeline.hpp"
#include "qsignal/closed_loop.hpp"
#include "qsignal/experiment.hpp"
