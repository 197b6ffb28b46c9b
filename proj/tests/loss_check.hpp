#pragma once

#include <vector>

#include "sslab/grad_check.hpp"
#include "sslab/objectives.hpp"

namespace sslab::test {

// Flattens a ParamSet into grad_check leaves and rebuilds the assembled loss
// from leaf variables. The LossInputs must outlive the builder and should set
// frozen_targets so finite differences see targets held fixed.
struct LossCheck {
    std::vector<Tensor> leaves;
    GraphBuilder builder;
};

inline LossCheck make_loss_check(const LossInputs& in) {
    LossCheck check;
    const ParamSet& params = *in.params;
    for (const auto& l : params.layers) {
        check.leaves.push_back(l.w);
        check.leaves.push_back(l.b);
        if (l.log_sigma2.numel() > 0) check.leaves.push_back(l.log_sigma2);
    }
    bool variational = params.variational();
    std::size_t n_layers = params.layers.size();
    check.builder = [in, variational, n_layers](Graph& g, const std::vector<Val>& vars) {
        ParamVars pv;
        pv.trainable = true;
        std::size_t per_layer = variational ? 3 : 2;
        for (std::size_t l = 0; l < n_layers; ++l) {
            ParamVars::LayerVars lv;
            lv.w = vars[l * per_layer];
            lv.b = vars[l * per_layer + 1];
            if (variational) lv.log_sigma2 = vars[l * per_layer + 2];
            pv.layers.push_back(lv);
        }
        return assemble_loss(g, in, pv).total;
    };
    return check;
}

}  // namespace sslab::test
