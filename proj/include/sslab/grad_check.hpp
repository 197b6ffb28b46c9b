#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sslab/graph.hpp"

namespace sslab {

/// Builds a scalar-valued graph from leaf variables that the checker binds.
/// Must be deterministic: any stochastic node draws from the graph seed, so
/// rebuilding with the same seed reproduces the same function.
using GraphBuilder = std::function<Val(Graph&, const std::vector<Val>&)>;

/// Max relative error between the analytic gradient of leaves[leaf_index] and
/// central finite differences:
///   max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8)
double grad_check(const GraphBuilder& build, const std::vector<Tensor>& leaves,
                  std::size_t leaf_index, double epsilon = 1e-6, std::uint64_t seed = 0);

}  // namespace sslab
