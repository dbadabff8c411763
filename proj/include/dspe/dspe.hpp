#pragma once

#include "dspe/arch.hpp"
#include "dspe/booth.hpp"
#include "dspe/config.hpp"
#include "dspe/ledger.hpp"
#include "dspe/merkle.hpp"
#include "dspe/model.hpp"
#include "dspe/posit.hpp"
#include "dspe/report.hpp"
#include "dspe/rng.hpp"
#include "dspe/workload.hpp"
