#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sslab {

/// Thrown when operand shapes are incompatible; the message names both shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown when a NaN/Inf appears at a graph-evaluation boundary.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown on API misuse (backward before eval, non-scalar root, ...).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of 64-bit reals. The only numeric value in the
/// library; rank is usually 1 (vectors/biases) or 2 (matrices/batches).
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(count(shape), fill) {}
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != data.size())
            throw ShapeError("tensor: shape " + shape_str() + " does not match " +
                             std::to_string(data.size()) + " scalars");
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    bool is_scalar() const { return numel() == 1; }

    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const {
        if (shape.size() == 2) return shape[1];
        if (shape.size() == 1) return shape[0];
        throw ShapeError("cols(): tensor of rank " + std::to_string(shape.size()));
    }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }
    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

    /// True iff every entry is finite.
    bool all_finite() const;
};

/// L2 norm of all entries.
double norm2(const Tensor& t);

/// Dot product over flattened entries (shapes must match).
double dot(const Tensor& a, const Tensor& b);

}  // namespace sslab
