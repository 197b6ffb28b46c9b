#pragma once

#include <cmath>

#include "sslab/model.hpp"
#include "sslab/mur.hpp"

namespace sslab::test {

// Fixed 2-D two-class logistic model shared by the solver quality checks:
// logit gap (w0-w1).x + (b0-b1) = 1.5 x0 - 1.0 x1 + 0.2, so the maximum
// entropy line crosses the radius-1 ball around (0.4, 0.3).
inline ModelSpec logistic2d_spec() {
    ModelSpec spec;
    spec.widths = {2, 2};
    return spec;
}

inline ParamSet logistic2d_params() {
    ParamSet params;
    LayerParams l;
    l.w = Tensor({2, 2}, {0.9, -0.6, -0.4, 0.6});  // columns: class weights
    l.b = Tensor({2}, {0.1, -0.1});
    params.layers.push_back(std::move(l));
    return params;
}

inline Tensor logistic2d_x0() { return Tensor({2}, {0.4, 0.3}); }
inline double logistic2d_radius() { return 1.0; }

/// Dense grid search over the radius-r ball: the oracle maximum entropy.
inline double grid_search_max_entropy(const ModelSpec& spec, const ParamSet& params,
                                      const Tensor& x0, double r, int per_axis = 100) {
    double best = -1.0;
    for (int a = 0; a < per_axis; ++a)
        for (int b = 0; b < per_axis; ++b) {
            double dx = -r + 2.0 * r * (a + 0.5) / per_axis;
            double dy = -r + 2.0 * r * (b + 0.5) / per_axis;
            if (dx * dx + dy * dy > r * r) continue;
            Tensor x({2}, {x0.data[0] + dx, x0.data[1] + dy});
            best = std::max(best, entropy_at(spec, params, x));
        }
    return best;
}

}  // namespace sslab::test
