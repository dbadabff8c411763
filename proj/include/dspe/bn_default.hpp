#pragma once

#include "dspe/booth.hpp"

namespace dspe::booth {

// Output of calibrate(calibration_trace(kCalibrationSeed, kCalibrationBatches,
// 0.1, 0.5)). test_booth re-runs the fit and checks these values.
inline BNModel default_bn_model()
{
    BNModel m;
    m.prior = {0.14473552644735527, 0.85526447355264479};
    m.cpt_bs = {{{0.00034506556245686681, 0.003450655624568668, 0.076604554865424432, 0.91959972394755007},
                 {0.00029222676797194621, 0.069783752191700757, 0.48655756867329047, 0.44336645236703681}}};
    m.cpt_rl = {{{0.00034506556245686681, 0.01932367149758454, 0.10041407867494824, 0.87991718426501031},
                 {0.0016949152542372881, 0.29649327878433662, 0.33062536528345998, 0.37118644067796608}}};
    m.r_low = 0.2;
    m.r_high = 1.0;
    return m;
}

} // namespace dspe::booth
