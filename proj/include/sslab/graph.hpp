#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "sslab/tensor.hpp"

namespace sslab {

class Graph;

/// Handle to a node inside a Graph. Cheap to copy; valid as long as the
/// owning graph is alive (graphs are neither copyable nor movable).
struct Val {
    Graph* g = nullptr;
    int id = -1;
    bool valid() const { return g != nullptr && id >= 0; }
};

enum class Op : std::uint8_t {
    Constant,
    Variable,
    Add,
    AddBias,
    Sub,
    Mul,
    Scale,
    MatMul,
    Exp,
    Log,
    Sqrt,
    Square,
    Sigmoid,
    Softplus,
    LeakyRelu,
    Clamp,
    Softmax,
    LogSoftmax,
    Sum,
    Mean,
    ConcatRows,
    GaussianNoise,
    StopGradient,
};

const char* op_name(Op op);

/// Reverse-mode tape over dense tensors.
///
/// Nodes are appended in construction order (always topological). Shapes are
/// checked at construction; values are computed by eval() and cached, so a
/// second eval() is free. backward() accumulates adjoints from a scalar root
/// and returns the gradient of every Variable leaf.
///
/// Stochastic nodes (GaussianNoise) draw from a per-node seed derived from
/// the graph seed at construction, so evaluation is deterministic and
/// independent of which subgraph is evaluated first.
///
/// Sqrt uses the zero subgradient at an exactly-zero input; everywhere else
/// its derivative is the usual 1/(2*sqrt(x)).
class Graph {
public:
    explicit Graph(std::uint64_t seed = 0) : seed_(seed) { nodes_.reserve(64); }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = delete;
    Graph& operator=(Graph&&) = delete;

    // ---- leaves -------------------------------------------------------
    Val constant(Tensor t);
    Val variable(Tensor t);

    // ---- ops ----------------------------------------------------------
    Val add(Val a, Val b);       // same shape
    Val add_bias(Val m, Val b);  // (n x k) + (k,), row broadcast
    Val sub(Val a, Val b);
    Val mul(Val a, Val b);  // elementwise
    Val scale(Val a, double c);
    Val matmul(Val a, Val b);
    Val exp(Val a);
    Val log(Val a);
    Val sqrt(Val a);
    Val square(Val a);
    Val sigmoid(Val a);
    Val softplus(Val a);
    Val leaky_relu(Val a, double slope);
    Val clamp(Val a, double lo, double hi);  // zero gradient outside [lo, hi]
    Val softmax(Val a);      // row-wise, rank 2, max-subtracted
    Val log_softmax(Val a);  // fused, never log(0)
    Val sum(Val a);          // full reduction -> (1,)
    Val mean(Val a);
    Val concat_rows(Val a, Val b);
    Val gaussian_noise(Val a, double sigma);  // a + sigma * eps
    Val stop_gradient(Val a);

    // ---- execution ----------------------------------------------------
    /// Evaluates all ancestors of root; returns the cached value.
    const Tensor& eval(Val root);

    /// Reverse pass from an already-evaluated scalar root. Returns the
    /// gradient for every Variable in the graph (zero if disconnected).
    std::map<int, Tensor> backward(Val root);

    /// Value of an evaluated node.
    const Tensor& value(Val v) const;

    /// Output shape, known at construction time for every node.
    const std::vector<std::size_t>& shape_of(Val v) const;

    /// Adjoint after the last backward(); zeros if none reached the node.
    Tensor adjoint(Val v) const;

    std::size_t size() const { return nodes_.size(); }
    std::uint64_t seed() const { return seed_; }

private:
    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        double attr = 0.0;   // scale factor / leaky slope / noise sigma / clamp lo
        double attr2 = 0.0;  // clamp hi
        std::vector<std::size_t> out_shape;
        Tensor out;
        Tensor adj;
        bool evaluated = false;
        std::uint64_t noise_seed = 0;
    };

    int push(Op op, int a, int b, double attr, std::vector<std::size_t> out_shape);
    void compute(int id);
    void check_operand(Val v) const;
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

    std::vector<Node> nodes_;
    std::uint64_t seed_ = 0;
    std::uint64_t noise_count_ = 0;
};

// Arithmetic sugar; both operands must live in the same graph.
inline Val operator+(Val a, Val b) { return a.g->add(a, b); }
inline Val operator-(Val a, Val b) { return a.g->sub(a, b); }
inline Val operator*(Val a, Val b) { return a.g->mul(a, b); }
inline Val operator*(double c, Val a) { return a.g->scale(a, c); }

}  // namespace sslab
