#pragma once

#include <random>

#include "sslab/tensor.hpp"

namespace sslab::test {

inline Tensor rand_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1.0,
                          double hi = 1.0) {
    std::uniform_real_distribution<double> uni(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data) v = uni(rng);
    return t;
}

inline Tensor randn_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                           double sigma = 1.0) {
    std::normal_distribution<double> normal(0.0, sigma);
    Tensor t(std::move(shape));
    for (double& v : t.data) v = sigma == 0.0 ? 0.0 : normal(rng);
    return t;
}

}  // namespace sslab::test
