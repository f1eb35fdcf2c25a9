// SPDX-License-Identifier: Apache-2.0
//
// Loss log CSV formatting.

#include "manas/losses.hpp"

#include <sstream>

namespace manas {

std::string loss_csv_header() { return "step,ext,int,arch,comp,trainA,trainB"; }

std::string loss_csv_row(long step, const LossReport& r) {
    std::ostringstream ss;
    ss.precision(12);
    ss << step << ',' << r.ext << ',' << r.internal << ',' << r.arch << ',' << r.comp << ','
       << r.trainA << ',' << r.trainB;
    return ss.str();
}

}  // namespace manas
