#include "sslab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sslab/util.hpp"

namespace sslab {

const char* op_name(Op op) {
    switch (op) {
        case Op::Constant: return "constant";
        case Op::Variable: return "variable";
        case Op::Add: return "add";
        case Op::AddBias: return "add_bias";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::MatMul: return "matmul";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::Square: return "square";
        case Op::Sigmoid: return "sigmoid";
        case Op::Softplus: return "softplus";
        case Op::LeakyRelu: return "leaky_relu";
        case Op::Clamp: return "clamp";
        case Op::Softmax: return "softmax";
        case Op::LogSoftmax: return "log_softmax";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::ConcatRows: return "concat_rows";
        case Op::GaussianNoise: return "gaussian_noise";
        case Op::StopGradient: return "stop_gradient";
    }
    return "?";
}

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
    return Tensor(s, std::vector<double>(Tensor::count(s), 0.0)).shape_str();
}

void require_rank2(const char* what, const std::vector<std::size_t>& s) {
    if (s.size() != 2)
        throw ShapeError(std::string(what) + ": expected rank-2 tensor, got " + shape_str(s));
}

}  // namespace

void Graph::check_operand(Val v) const {
    if (v.g != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw UsageError("graph: operand does not belong to this graph");
}

int Graph::push(Op op, int a, int b, double attr, std::vector<std::size_t> out_shape) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.attr = attr;
    n.out_shape = std::move(out_shape);
    if (op == Op::GaussianNoise)
        n.noise_seed = derive_seed(seed_, 0x6e6f697365ULL, noise_count_++);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Val Graph::constant(Tensor t) {
    if (!t.all_finite()) throw NumericError("constant: non-finite entry in " + t.shape_str());
    int id = push(Op::Constant, -1, -1, 0.0, t.shape);
    node(id).out = std::move(t);
    node(id).evaluated = true;
    return {this, id};
}

Val Graph::variable(Tensor t) {
    if (!t.all_finite()) throw NumericError("variable: non-finite entry in " + t.shape_str());
    int id = push(Op::Variable, -1, -1, 0.0, t.shape);
    node(id).out = std::move(t);
    node(id).evaluated = true;
    return {this, id};
}

Val Graph::add(Val a, Val b) {
    check_operand(a);
    check_operand(b);
    if (node(a.id).out_shape != node(b.id).out_shape)
        throw ShapeError("add: " + shape_str(node(a.id).out_shape) + " vs " +
                         shape_str(node(b.id).out_shape));
    return {this, push(Op::Add, a.id, b.id, 0.0, node(a.id).out_shape)};
}

Val Graph::add_bias(Val m, Val b) {
    check_operand(m);
    check_operand(b);
    const auto& ms = node(m.id).out_shape;
    const auto& bs = node(b.id).out_shape;
    require_rank2("add_bias", ms);
    if (bs.size() != 1 || bs[0] != ms[1])
        throw ShapeError("add_bias: " + shape_str(ms) + " vs bias " + shape_str(bs));
    return {this, push(Op::AddBias, m.id, b.id, 0.0, ms)};
}

Val Graph::sub(Val a, Val b) {
    check_operand(a);
    check_operand(b);
    if (node(a.id).out_shape != node(b.id).out_shape)
        throw ShapeError("sub: " + shape_str(node(a.id).out_shape) + " vs " +
                         shape_str(node(b.id).out_shape));
    return {this, push(Op::Sub, a.id, b.id, 0.0, node(a.id).out_shape)};
}

Val Graph::mul(Val a, Val b) {
    check_operand(a);
    check_operand(b);
    if (node(a.id).out_shape != node(b.id).out_shape)
        throw ShapeError("mul: " + shape_str(node(a.id).out_shape) + " vs " +
                         shape_str(node(b.id).out_shape));
    return {this, push(Op::Mul, a.id, b.id, 0.0, node(a.id).out_shape)};
}

Val Graph::scale(Val a, double c) {
    check_operand(a);
    return {this, push(Op::Scale, a.id, -1, c, node(a.id).out_shape)};
}

Val Graph::matmul(Val a, Val b) {
    check_operand(a);
    check_operand(b);
    const auto& as = node(a.id).out_shape;
    const auto& bs = node(b.id).out_shape;
    require_rank2("matmul", as);
    require_rank2("matmul", bs);
    if (as[1] != bs[0])
        throw ShapeError("matmul: " + shape_str(as) + " vs " + shape_str(bs));
    return {this, push(Op::MatMul, a.id, b.id, 0.0, {as[0], bs[1]})};
}

#define SSLAB_UNARY(NAME, OP)                                                \
    Val Graph::NAME(Val a) {                                                 \
        check_operand(a);                                                    \
        return {this, push(OP, a.id, -1, 0.0, node(a.id).out_shape)};        \
    }

SSLAB_UNARY(exp, Op::Exp)
SSLAB_UNARY(log, Op::Log)
SSLAB_UNARY(sqrt, Op::Sqrt)
SSLAB_UNARY(square, Op::Square)
SSLAB_UNARY(sigmoid, Op::Sigmoid)
SSLAB_UNARY(softplus, Op::Softplus)
SSLAB_UNARY(stop_gradient, Op::StopGradient)
#undef SSLAB_UNARY

Val Graph::leaky_relu(Val a, double slope) {
    check_operand(a);
    return {this, push(Op::LeakyRelu, a.id, -1, slope, node(a.id).out_shape)};
}

Val Graph::clamp(Val a, double lo, double hi) {
    check_operand(a);
    if (lo > hi) throw UsageError("clamp: lo > hi");
    int id = push(Op::Clamp, a.id, -1, lo, node(a.id).out_shape);
    node(id).attr2 = hi;
    return {this, id};
}

Val Graph::softmax(Val a) {
    check_operand(a);
    require_rank2("softmax", node(a.id).out_shape);
    return {this, push(Op::Softmax, a.id, -1, 0.0, node(a.id).out_shape)};
}

Val Graph::log_softmax(Val a) {
    check_operand(a);
    require_rank2("log_softmax", node(a.id).out_shape);
    return {this, push(Op::LogSoftmax, a.id, -1, 0.0, node(a.id).out_shape)};
}

Val Graph::sum(Val a) {
    check_operand(a);
    return {this, push(Op::Sum, a.id, -1, 0.0, {1})};
}

Val Graph::mean(Val a) {
    check_operand(a);
    if (Tensor::count(node(a.id).out_shape) == 0)
        throw ShapeError("mean: empty tensor " + shape_str(node(a.id).out_shape));
    return {this, push(Op::Mean, a.id, -1, 0.0, {1})};
}

Val Graph::concat_rows(Val a, Val b) {
    check_operand(a);
    check_operand(b);
    const auto& as = node(a.id).out_shape;
    const auto& bs = node(b.id).out_shape;
    require_rank2("concat_rows", as);
    require_rank2("concat_rows", bs);
    if (as[1] != bs[1])
        throw ShapeError("concat_rows: " + shape_str(as) + " vs " + shape_str(bs));
    return {this, push(Op::ConcatRows, a.id, b.id, 0.0, {as[0] + bs[0], as[1]})};
}

Val Graph::gaussian_noise(Val a, double sigma) {
    check_operand(a);
    return {this, push(Op::GaussianNoise, a.id, -1, sigma, node(a.id).out_shape)};
}

void Graph::compute(int id) {
    Node& n = node(id);
    const Tensor* A = n.a >= 0 ? &node(n.a).out : nullptr;
    const Tensor* B = n.b >= 0 ? &node(n.b).out : nullptr;
    Tensor out(n.out_shape);
    std::size_t m = out.numel();

    switch (n.op) {
        case Op::Constant:
        case Op::Variable:
            return;  // leaves carry their value from construction
        case Op::Add:
            for (std::size_t i = 0; i < m; ++i) out.data[i] = A->data[i] + B->data[i];
            break;
        case Op::AddBias: {
            std::size_t rows = n.out_shape[0], cols = n.out_shape[1];
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    out.data[i * cols + j] = A->data[i * cols + j] + B->data[j];
            break;
        }
        case Op::Sub:
            for (std::size_t i = 0; i < m; ++i) out.data[i] = A->data[i] - B->data[i];
            break;
        case Op::Mul:
            for (std::size_t i = 0; i < m; ++i) out.data[i] = A->data[i] * B->data[i];
            break;
        case Op::Scale:
            for (std::size_t i = 0; i < m; ++i) out.data[i] = n.attr * A->data[i];
            break;
        case Op::MatMul: {
            std::size_t rows = n.out_shape[0], cols = n.out_shape[1];
            std::size_t inner = node(n.a).out_shape[1];
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t k = 0; k < inner; ++k) {
                    double aik = A->data[i * inner + k];
                    if (aik == 0.0) continue;
                    const double* brow = &B->data[k * cols];
                    double* orow = &out.data[i * cols];
                    for (std::size_t j = 0; j < cols; ++j) orow[j] += aik * brow[j];
                }
            break;
        }
        case Op::Exp:
            for (std::size_t i = 0; i < m; ++i) out.data[i] = std::exp(A->data[i]);
            break;
        case Op::Log:
            for (std::size_t i = 0; i < m; ++i) out.data[i] = std::log(A->data[i]);
            break;
        case Op::Sqrt:
            for (std::size_t i = 0; i < m; ++i) out.data[i] = std::sqrt(A->data[i]);
            break;
        case Op::Square:
            for (std::size_t i = 0; i < m; ++i) out.data[i] = A->data[i] * A->data[i];
            break;
        case Op::Sigmoid:
            for (std::size_t i = 0; i < m; ++i) out.data[i] = 1.0 / (1.0 + std::exp(-A->data[i]));
            break;
        case Op::Softplus:
            // log(1 + e^x), overflow-safe
            for (std::size_t i = 0; i < m; ++i) {
                double x = A->data[i];
                out.data[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
            }
            break;
        case Op::LeakyRelu:
            for (std::size_t i = 0; i < m; ++i) {
                double x = A->data[i];
                out.data[i] = x > 0.0 ? x : n.attr * x;
            }
            break;
        case Op::Clamp:
            for (std::size_t i = 0; i < m; ++i)
                out.data[i] = std::min(std::max(A->data[i], n.attr), n.attr2);
            break;
        case Op::Softmax:
        case Op::LogSoftmax: {
            std::size_t rows = n.out_shape[0], cols = n.out_shape[1];
            for (std::size_t i = 0; i < rows; ++i) {
                const double* z = &A->data[i * cols];
                double* o = &out.data[i * cols];
                double zmax = z[0];
                for (std::size_t j = 1; j < cols; ++j) zmax = std::max(zmax, z[j]);
                double denom = 0.0;
                for (std::size_t j = 0; j < cols; ++j) denom += std::exp(z[j] - zmax);
                if (n.op == Op::Softmax) {
                    for (std::size_t j = 0; j < cols; ++j) o[j] = std::exp(z[j] - zmax) / denom;
                } else {
                    double lden = std::log(denom);
                    for (std::size_t j = 0; j < cols; ++j) o[j] = z[j] - zmax - lden;
                }
            }
            break;
        }
        case Op::Sum: {
            double s = 0.0;
            for (double v : A->data) s += v;
            out.data[0] = s;
            break;
        }
        case Op::Mean: {
            double s = 0.0;
            for (double v : A->data) s += v;
            out.data[0] = s / static_cast<double>(A->numel());
            break;
        }
        case Op::ConcatRows: {
            std::copy(A->data.begin(), A->data.end(), out.data.begin());
            std::copy(B->data.begin(), B->data.end(), out.data.begin() + static_cast<long>(A->numel()));
            break;
        }
        case Op::GaussianNoise: {
            std::mt19937_64 rng(n.noise_seed);
            std::normal_distribution<double> normal(0.0, 1.0);
            for (std::size_t i = 0; i < m; ++i) out.data[i] = A->data[i] + n.attr * normal(rng);
            break;
        }
        case Op::StopGradient:
            out.data = A->data;
            break;
    }

    if (!out.all_finite())
        throw NumericError(std::string("eval: non-finite value at node #") + std::to_string(id) +
                           " (" + op_name(n.op) + ")");
    n.out = std::move(out);
    n.evaluated = true;
}

const Tensor& Graph::eval(Val root) {
    check_operand(root);
    // mark ancestors, then compute forward in construction (= topological) order
    std::vector<char> needed(static_cast<std::size_t>(root.id) + 1, 0);
    needed[static_cast<std::size_t>(root.id)] = 1;
    for (int id = root.id; id >= 0; --id) {
        if (!needed[static_cast<std::size_t>(id)]) continue;
        const Node& n = node(id);
        if (n.a >= 0) needed[static_cast<std::size_t>(n.a)] = 1;
        if (n.b >= 0) needed[static_cast<std::size_t>(n.b)] = 1;
    }
    for (int id = 0; id <= root.id; ++id)
        if (needed[static_cast<std::size_t>(id)] && !node(id).evaluated) compute(id);
    return node(root.id).out;
}

const Tensor& Graph::value(Val v) const {
    check_operand(v);
    if (!node(v.id).evaluated) throw UsageError("value: node not evaluated yet");
    return node(v.id).out;
}

const std::vector<std::size_t>& Graph::shape_of(Val v) const {
    check_operand(v);
    return node(v.id).out_shape;
}

Tensor Graph::adjoint(Val v) const {
    check_operand(v);
    const Node& n = node(v.id);
    if (n.adj.numel() > 0) return n.adj;
    return Tensor(n.out_shape);
}

std::map<int, Tensor> Graph::backward(Val root) {
    check_operand(root);
    Node& r = node(root.id);
    if (!r.evaluated) throw UsageError("backward: eval must run before backward");
    if (Tensor::count(r.out_shape) != 1)
        throw UsageError("backward: root must be scalar, got " + r.out.shape_str());

    for (Node& n : nodes_) n.adj = Tensor();
    r.adj = Tensor(r.out_shape, std::vector<double>{1.0});

    auto grad_of = [&](int id) -> Tensor& {
        Node& n = node(id);
        if (n.adj.numel() == 0) n.adj = Tensor(n.out_shape);
        return n.adj;
    };

    for (int id = root.id; id >= 0; --id) {
        Node& n = node(id);
        if (!n.evaluated || n.adj.numel() == 0) continue;
        const Tensor& g = n.adj;
        std::size_t m = g.numel();
        switch (n.op) {
            case Op::Constant:
            case Op::Variable:
                break;
            case Op::Add: {
                Tensor& ga = grad_of(n.a);
                Tensor& gb = grad_of(n.b);
                for (std::size_t i = 0; i < m; ++i) {
                    ga.data[i] += g.data[i];
                    gb.data[i] += g.data[i];
                }
                break;
            }
            case Op::AddBias: {
                Tensor& ga = grad_of(n.a);
                Tensor& gb = grad_of(n.b);
                std::size_t rows = n.out_shape[0], cols = n.out_shape[1];
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) {
                        ga.data[i * cols + j] += g.data[i * cols + j];
                        gb.data[j] += g.data[i * cols + j];
                    }
                break;
            }
            case Op::Sub: {
                Tensor& ga = grad_of(n.a);
                Tensor& gb = grad_of(n.b);
                for (std::size_t i = 0; i < m; ++i) {
                    ga.data[i] += g.data[i];
                    gb.data[i] -= g.data[i];
                }
                break;
            }
            case Op::Mul: {
                Tensor& ga = grad_of(n.a);
                Tensor& gb = grad_of(n.b);
                const Tensor& av = node(n.a).out;
                const Tensor& bv = node(n.b).out;
                for (std::size_t i = 0; i < m; ++i) {
                    ga.data[i] += g.data[i] * bv.data[i];
                    gb.data[i] += g.data[i] * av.data[i];
                }
                break;
            }
            case Op::Scale: {
                Tensor& ga = grad_of(n.a);
                for (std::size_t i = 0; i < m; ++i) ga.data[i] += n.attr * g.data[i];
                break;
            }
            case Op::MatMul: {
                Tensor& ga = grad_of(n.a);
                Tensor& gb = grad_of(n.b);
                const Tensor& av = node(n.a).out;
                const Tensor& bv = node(n.b).out;
                std::size_t rows = n.out_shape[0], cols = n.out_shape[1];
                std::size_t inner = node(n.a).out_shape[1];
                // dA = g * B^T ; dB = A^T * g
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t k = 0; k < inner; ++k) {
                        double s = 0.0;
                        const double* grow = &g.data[i * cols];
                        const double* brow = &bv.data[k * cols];
                        for (std::size_t j = 0; j < cols; ++j) s += grow[j] * brow[j];
                        ga.data[i * inner + k] += s;
                    }
                for (std::size_t k = 0; k < inner; ++k)
                    for (std::size_t i = 0; i < rows; ++i) {
                        double aik = av.data[i * inner + k];
                        if (aik == 0.0) continue;
                        const double* grow = &g.data[i * cols];
                        double* brow = &gb.data[k * cols];
                        for (std::size_t j = 0; j < cols; ++j) brow[j] += aik * grow[j];
                    }
                break;
            }
            case Op::Exp: {
                Tensor& ga = grad_of(n.a);
                for (std::size_t i = 0; i < m; ++i) ga.data[i] += g.data[i] * n.out.data[i];
                break;
            }
            case Op::Log: {
                Tensor& ga = grad_of(n.a);
                const Tensor& av = node(n.a).out;
                for (std::size_t i = 0; i < m; ++i) ga.data[i] += g.data[i] / av.data[i];
                break;
            }
            case Op::Sqrt: {
                Tensor& ga = grad_of(n.a);
                for (std::size_t i = 0; i < m; ++i)
                    if (n.out.data[i] != 0.0) ga.data[i] += g.data[i] * 0.5 / n.out.data[i];
                break;
            }
            case Op::Square: {
                Tensor& ga = grad_of(n.a);
                const Tensor& av = node(n.a).out;
                for (std::size_t i = 0; i < m; ++i) ga.data[i] += g.data[i] * 2.0 * av.data[i];
                break;
            }
            case Op::Sigmoid: {
                Tensor& ga = grad_of(n.a);
                for (std::size_t i = 0; i < m; ++i)
                    ga.data[i] += g.data[i] * n.out.data[i] * (1.0 - n.out.data[i]);
                break;
            }
            case Op::Softplus: {
                Tensor& ga = grad_of(n.a);
                const Tensor& av = node(n.a).out;
                for (std::size_t i = 0; i < m; ++i)
                    ga.data[i] += g.data[i] / (1.0 + std::exp(-av.data[i]));
                break;
            }
            case Op::LeakyRelu: {
                Tensor& ga = grad_of(n.a);
                const Tensor& av = node(n.a).out;
                for (std::size_t i = 0; i < m; ++i)
                    ga.data[i] += g.data[i] * (av.data[i] > 0.0 ? 1.0 : n.attr);
                break;
            }
            case Op::Clamp: {
                Tensor& ga = grad_of(n.a);
                const Tensor& av = node(n.a).out;
                for (std::size_t i = 0; i < m; ++i)
                    if (av.data[i] >= n.attr && av.data[i] <= n.attr2)
                        ga.data[i] += g.data[i];
                break;
            }
            case Op::Softmax: {
                Tensor& ga = grad_of(n.a);
                std::size_t rows = n.out_shape[0], cols = n.out_shape[1];
                for (std::size_t i = 0; i < rows; ++i) {
                    const double* p = &n.out.data[i * cols];
                    const double* gr = &g.data[i * cols];
                    double inner = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) inner += gr[j] * p[j];
                    for (std::size_t j = 0; j < cols; ++j)
                        ga.data[i * cols + j] += p[j] * (gr[j] - inner);
                }
                break;
            }
            case Op::LogSoftmax: {
                Tensor& ga = grad_of(n.a);
                std::size_t rows = n.out_shape[0], cols = n.out_shape[1];
                for (std::size_t i = 0; i < rows; ++i) {
                    const double* lp = &n.out.data[i * cols];
                    const double* gr = &g.data[i * cols];
                    double gsum = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) gsum += gr[j];
                    for (std::size_t j = 0; j < cols; ++j)
                        ga.data[i * cols + j] += gr[j] - std::exp(lp[j]) * gsum;
                }
                break;
            }
            case Op::Sum: {
                Tensor& ga = grad_of(n.a);
                for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] += g.data[0];
                break;
            }
            case Op::Mean: {
                Tensor& ga = grad_of(n.a);
                double c = g.data[0] / static_cast<double>(ga.numel());
                for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] += c;
                break;
            }
            case Op::ConcatRows: {
                Tensor& ga = grad_of(n.a);
                Tensor& gb = grad_of(n.b);
                for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] += g.data[i];
                for (std::size_t i = 0; i < gb.numel(); ++i) gb.data[i] += g.data[ga.numel() + i];
                break;
            }
            case Op::GaussianNoise: {
                Tensor& ga = grad_of(n.a);
                for (std::size_t i = 0; i < m; ++i) ga.data[i] += g.data[i];
                break;
            }
            case Op::StopGradient:
                break;  // adjoint stops here by definition
        }
    }

    std::map<int, Tensor> grads;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const Node& n = nodes_[id];
        if (n.op != Op::Variable) continue;
        grads.emplace(static_cast<int>(id),
                      n.adj.numel() > 0 ? n.adj : Tensor(n.out_shape));
    }
    return grads;
}

}  // namespace sslab
