#include "sslab/tensor.hpp"

#include <cmath>

namespace sslab {

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

double norm2(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s);
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel())
        throw ShapeError("dot: " + a.shape_str() + " vs " + b.shape_str());
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

}  // namespace sslab
