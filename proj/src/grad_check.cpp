#include "sslab/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace sslab {

namespace {

double eval_scalar(const GraphBuilder& build, const std::vector<Tensor>& leaves,
                   std::uint64_t seed) {
    Graph g(seed);
    std::vector<Val> vars;
    vars.reserve(leaves.size());
    for (const Tensor& t : leaves) vars.push_back(g.variable(t));
    Val root = build(g, vars);
    const Tensor& out = g.eval(root);
    if (!out.is_scalar())
        throw UsageError("grad_check: graph output must be scalar, got " + out.shape_str());
    return out.data[0];
}

}  // namespace

double grad_check(const GraphBuilder& build, const std::vector<Tensor>& leaves,
                  std::size_t leaf_index, double epsilon, std::uint64_t seed) {
    if (leaf_index >= leaves.size()) throw UsageError("grad_check: leaf index out of range");

    // analytic pass
    Tensor analytic;
    {
        Graph g(seed);
        std::vector<Val> vars;
        vars.reserve(leaves.size());
        for (const Tensor& t : leaves) vars.push_back(g.variable(t));
        Val root = build(g, vars);
        const Tensor& out = g.eval(root);
        if (!out.is_scalar())
            throw UsageError("grad_check: graph output must be scalar, got " + out.shape_str());
        auto grads = g.backward(root);
        analytic = grads.at(vars[leaf_index].id);
    }

    // central differences, rebuilding the graph with the same seed each time
    double max_rel = 0.0;
    std::vector<Tensor> shifted = leaves;
    for (std::size_t i = 0; i < analytic.numel(); ++i) {
        double orig = leaves[leaf_index].data[i];
        shifted[leaf_index].data[i] = orig + epsilon;
        double fp = eval_scalar(build, shifted, seed);
        shifted[leaf_index].data[i] = orig - epsilon;
        double fm = eval_scalar(build, shifted, seed);
        shifted[leaf_index].data[i] = orig;
        double numeric = (fp - fm) / (2.0 * epsilon);
        double denom = std::max({std::abs(analytic.data[i]), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic.data[i] - numeric) / denom);
    }
    return max_rel;
}

}  // namespace sslab
