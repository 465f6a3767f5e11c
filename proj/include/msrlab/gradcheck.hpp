#pragma once

#include <functional>
#include <string>

#include "msrlab/params.hpp"
#include "msrlab/tensor.hpp"

namespace msr {

struct FdReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t coords_checked = 0;
};

// Compares analytic gradients against central finite differences.
// `build_loss` constructs a fresh graph over `params` and returns the scalar
// loss node. At least `coords_per_param` coordinates are sampled per
// trainable parameter (all of them when a parameter is smaller than that).
// Relative error is |analytic - numeric| / max(1, |analytic|).
FdReport finite_difference_check(const std::function<int(Graph&)>& build_loss, ParamStore& params,
                                 double epsilon, uint64_t seed, int coords_per_param = 20);

}  // namespace msr
