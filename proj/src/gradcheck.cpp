#include "msrlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msrlab/rng.hpp"

namespace msr {

FdReport finite_difference_check(const std::function<int(Graph&)>& build_loss, ParamStore& params,
                                 double epsilon, uint64_t seed, int coords_per_param) {
    if (epsilon < 1e-7 || epsilon > 1e-3)
        throw GraphError("finite_difference_check: epsilon must lie in [1e-7, 1e-3]");

    Graph graph(&params);
    int loss = build_loss(graph);
    if (numel(graph.shape(loss)) != 1)
        throw GraphError("finite_difference_check: loss must be scalar");
    if (!std::isfinite(graph.scalar_value(loss)))
        throw GraphError("finite_difference_check: non-finite loss at base point");

    GradientMap grads(params);
    graph.backward(loss, grads);

    Rng rng(seed);
    FdReport report;
    for (int pi = 0; pi < params.size(); ++pi) {
        Param& p = params.at(pi);
        if (!p.trainable) continue;
        size_t n = p.value.size();
        std::vector<size_t> coords;
        if (n <= static_cast<size_t>(coords_per_param)) {
            coords.resize(n);
            std::iota(coords.begin(), coords.end(), 0);
        } else {
            for (int c = 0; c < coords_per_param; ++c)
                coords.push_back(rng.below(static_cast<uint32_t>(n)));
        }
        for (size_t c : coords) {
            double saved = p.value[c];
            p.value[c] = saved + epsilon;
            graph.recompute();
            double lp = graph.scalar_value(loss);
            p.value[c] = saved - epsilon;
            graph.recompute();
            double lm = graph.scalar_value(loss);
            p.value[c] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw GraphError("finite_difference_check: non-finite loss while perturbing '" +
                                 p.name + "'");
            double numeric = (lp - lm) / (2.0 * epsilon);
            double analytic = grads[pi][c];
            double rel = std::fabs(analytic - numeric) / std::max(1.0, std::fabs(analytic));
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p.name;
            }
        }
    }
    graph.recompute();  // restore base-point values
    return report;
}

}  // namespace msr
