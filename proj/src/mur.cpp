#include "sslab/mur.hpp"

#include <cmath>
#include <string>

#include "sslab/util.hpp"

namespace sslab {

namespace {
constexpr double kDegenerateNorm = 1e-12;

Tensor as_row(const Tensor& x) {
    Tensor row = x;
    if (row.shape.size() == 1) row.shape = {1, row.shape[0]};
    return row;
}

Tensor as_vec(Tensor x, const Tensor& like) {
    if (like.shape.size() == 1) x.shape = {x.numel()};
    return x;
}

void check_finite_iterate(const Tensor& x, int step) {
    if (!x.all_finite())
        throw NumericError("virtual point solver: non-finite iterate at step " +
                           std::to_string(step));
}

}  // namespace

const char* mur_solver_name(MurSolver s) {
    switch (s) {
        case MurSolver::Direct: return "direct";
        case MurSolver::Pga: return "pga";
        case MurSolver::LagrangianGa: return "laga";
        case MurSolver::Random: return "random";
        case MurSolver::Off: return "off";
    }
    return "?";
}

MurSolver mur_solver_from_name(const std::string& name) {
    if (name == "direct") return MurSolver::Direct;
    if (name == "pga") return MurSolver::Pga;
    if (name == "laga") return MurSolver::LagrangianGa;
    if (name == "random") return MurSolver::Random;
    if (name == "off") return MurSolver::Off;
    throw UsageError("unknown virtual point solver '" + name + "'");
}

void MurConfig::validate() const {
    if (solver == MurSolver::Off) return;
    // radius 0 is the degenerate edge where every solver returns x0 itself;
    // kept legal so baseline grids can include r = 0
    if (radius < 0.0) throw UsageError("mur: radius must be >= 0");
    if (radius == 0.0 && solver == MurSolver::LagrangianGa)
        throw UsageError("mur: the Lagrangian relaxation needs a positive radius");
    if (lr <= 0.0) throw UsageError("mur: learning rate must be positive");
    if (steps < 1) throw UsageError("mur: need at least one solver step");
}

double predictive_entropy(const Tensor& prob_row) {
    double h = 0.0;
    for (double p : prob_row.data) {
        double q = std::max(p, 1e-12);
        h -= q * std::log(q);
    }
    return h;
}

Tensor entropy_gradient_batch(const ModelSpec& spec, const ParamSet& params, const Tensor& x0s) {
    Graph g(0);
    ParamVars vars = bind_params_const(g, params);
    Val x = g.variable(x0s);
    Val logits = build_network(g, spec, vars, x, ForwardOpts{});
    Val probs = g.softmax(logits);
    Val log_probs = g.log_softmax(logits);
    // sum of row entropies; independent rows make the input adjoint per-row
    Val h_total = g.scale(g.sum(g.mul(probs, log_probs)), -1.0);
    g.eval(h_total);
    g.backward(h_total);
    return g.adjoint(x);
}

Tensor entropy_gradient(const ModelSpec& spec, const ParamSet& params, const Tensor& x0) {
    Tensor row = as_row(x0);
    return as_vec(entropy_gradient_batch(spec, params, row), x0);
}

double entropy_at(const ModelSpec& spec, const ParamSet& params, const Tensor& x) {
    PredictiveOutput out = forward(spec, params, as_row(x), false, 0);
    return predictive_entropy(out.probs);
}

VirtualPointResult virtual_point_direct(const Tensor& x0, const Tensor& g0, double r) {
    if (r <= 0.0) throw UsageError("virtual_point_direct: radius must be positive");
    if (!x0.same_shape(g0))
        throw ShapeError("virtual_point_direct: x0 " + x0.shape_str() + " vs g0 " +
                         g0.shape_str());
    VirtualPointResult res;
    res.g0_norm = norm2(g0);
    if (res.g0_norm < kDegenerateNorm) {
        res.degenerate = true;
        res.x_star = x0;
        return res;
    }
    res.x_star = x0;
    for (std::size_t i = 0; i < x0.numel(); ++i)
        res.x_star.data[i] = x0.data[i] + r * g0.data[i] / res.g0_norm;
    return res;
}

VirtualPointResult virtual_point_pga(const ModelSpec& spec, const ParamSet& params,
                                     const Tensor& x0, const MurConfig& cfg) {
    cfg.validate();
    VirtualPointResult res;
    res.g0_norm = norm2(entropy_gradient(spec, params, x0));
    Tensor x = x0;
    for (int t = 0; t < cfg.steps; ++t) {
        Tensor grad = entropy_gradient(spec, params, x);
        Tensor moved = x;
        for (std::size_t i = 0; i < x.numel(); ++i) moved.data[i] += cfg.lr * grad.data[i];
        // project back onto the ball when the ascent step leaves it
        Tensor diff = moved;
        for (std::size_t i = 0; i < diff.numel(); ++i) diff.data[i] -= x0.data[i];
        double dist = norm2(diff);
        if (dist > cfg.radius) {
            for (std::size_t i = 0; i < moved.numel(); ++i)
                moved.data[i] = x0.data[i] + cfg.radius * diff.data[i] / dist;
            dist = cfg.radius;
        }
        check_finite_iterate(moved, t);
        x = std::move(moved);
        res.trace.push_back({x, entropy_at(spec, params, x), dist});
    }
    res.x_star = x;
    return res;
}

double lagrangian_lambda_star(double dist, double g0_norm, double r) {
    if (r <= 0.0) throw UsageError("lambda_star: radius must be positive");
    return dist * g0_norm / r;
}

Tensor lagrangian_penalty_gradient(const Tensor& x, const Tensor& x0, double g0_norm, double r) {
    if (r <= 0.0) throw UsageError("penalty gradient: radius must be positive");
    Tensor out = x;
    double dist = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        out.data[i] -= x0.data[i];
        dist += out.data[i] * out.data[i];
    }
    dist = std::sqrt(dist);
    double bracket = 2.0 - r / dist;
    for (double& v : out.data) v *= g0_norm / r * bracket;
    return out;
}

VirtualPointResult virtual_point_lagrangian_ga(const ModelSpec& spec, const ParamSet& params,
                                               const Tensor& x0, const MurConfig& cfg,
                                               std::uint64_t seed) {
    cfg.validate();
    VirtualPointResult res;
    double g0_norm = norm2(entropy_gradient(spec, params, x0));
    res.g0_norm = g0_norm;

    // small in-ball offset; at x = x0 the penalty gradient has an r/||x-x0||
    // singularity
    std::mt19937_64 rng(seed);
    Tensor x = random_point_on_sphere(x0, 1e-3 * cfg.radius, rng);

    for (int t = 0; t < cfg.steps; ++t) {
        Tensor grad = entropy_gradient(spec, params, x);
        Tensor penalty = lagrangian_penalty_gradient(x, x0, g0_norm, cfg.radius);
        for (std::size_t i = 0; i < x.numel(); ++i)
            x.data[i] += cfg.lr * (grad.data[i] - penalty.data[i]);
        check_finite_iterate(x, t);
        Tensor d2 = x;
        for (std::size_t i = 0; i < d2.numel(); ++i) d2.data[i] -= x0.data[i];
        res.trace.push_back({x, entropy_at(spec, params, x), norm2(d2)});
    }
    res.x_star = x;
    return res;
}

Tensor random_point_on_sphere(const Tensor& x0, double r, std::mt19937_64& rng) {
    if (r < 0.0) throw UsageError("random_point_on_sphere: negative radius");
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor u(x0.shape);
    double n = 0.0;
    do {
        for (double& v : u.data) v = normal(rng);
        n = norm2(u);
    } while (n < kDegenerateNorm);  // underflow redraw; practically never taken
    Tensor out = x0;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += r * u.data[i] / n;
    return out;
}

BatchVirtualPoints find_virtual_points(const ModelSpec& spec, const ParamSet& params,
                                       const Tensor& x0s, const MurConfig& cfg,
                                       std::mt19937_64& rng) {
    cfg.validate();
    if (cfg.solver == MurSolver::Off) throw UsageError("find_virtual_points: solver is off");
    std::size_t n = x0s.shape[0], d = x0s.shape[1];
    BatchVirtualPoints out;
    out.x_star = x0s;
    out.g0_norms.assign(n, 0.0);

    Tensor g0 = entropy_gradient_batch(spec, params, x0s);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += g0.at(i, j) * g0.at(i, j);
        out.g0_norms[i] = std::sqrt(s);
    }

    if (cfg.radius == 0.0) return out;  // every solver collapses to x0

    switch (cfg.solver) {
        case MurSolver::Random: {
            for (std::size_t i = 0; i < n; ++i) {
                Tensor row({d});
                for (std::size_t j = 0; j < d; ++j) row.data[j] = x0s.at(i, j);
                Tensor moved = random_point_on_sphere(row, cfg.radius, rng);
                for (std::size_t j = 0; j < d; ++j) out.x_star.at(i, j) = moved.data[j];
            }
            break;
        }
        case MurSolver::Direct: {
            for (std::size_t i = 0; i < n; ++i) {
                if (out.g0_norms[i] < kDegenerateNorm) {
                    Tensor row({d});
                    for (std::size_t j = 0; j < d; ++j) row.data[j] = x0s.at(i, j);
                    Tensor moved = random_point_on_sphere(row, cfg.radius, rng);
                    for (std::size_t j = 0; j < d; ++j) out.x_star.at(i, j) = moved.data[j];
                    ++out.n_degenerate;
                } else {
                    for (std::size_t j = 0; j < d; ++j)
                        out.x_star.at(i, j) =
                            x0s.at(i, j) + cfg.radius * g0.at(i, j) / out.g0_norms[i];
                }
            }
            break;
        }
        case MurSolver::Pga: {
            Tensor x = x0s;
            for (int t = 0; t < cfg.steps; ++t) {
                Tensor grad = entropy_gradient_batch(spec, params, x);
                for (std::size_t i = 0; i < n; ++i) {
                    double dist2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        x.at(i, j) += cfg.lr * grad.at(i, j);
                        double dj = x.at(i, j) - x0s.at(i, j);
                        dist2 += dj * dj;
                    }
                    double dist = std::sqrt(dist2);
                    if (dist > cfg.radius)
                        for (std::size_t j = 0; j < d; ++j)
                            x.at(i, j) = x0s.at(i, j) +
                                         cfg.radius * (x.at(i, j) - x0s.at(i, j)) / dist;
                }
                check_finite_iterate(x, t);
            }
            out.x_star = std::move(x);
            break;
        }
        case MurSolver::LagrangianGa: {
            Tensor x = x0s;
            for (std::size_t i = 0; i < n; ++i) {
                Tensor row({d});
                for (std::size_t j = 0; j < d; ++j) row.data[j] = x0s.at(i, j);
                Tensor start = random_point_on_sphere(row, 1e-3 * cfg.radius, rng);
                for (std::size_t j = 0; j < d; ++j) x.at(i, j) = start.data[j];
            }
            for (int t = 0; t < cfg.steps; ++t) {
                Tensor grad = entropy_gradient_batch(spec, params, x);
                for (std::size_t i = 0; i < n; ++i) {
                    Tensor xi({d}), x0i({d});
                    for (std::size_t j = 0; j < d; ++j) {
                        xi.data[j] = x.at(i, j);
                        x0i.data[j] = x0s.at(i, j);
                    }
                    Tensor penalty =
                        lagrangian_penalty_gradient(xi, x0i, out.g0_norms[i], cfg.radius);
                    for (std::size_t j = 0; j < d; ++j)
                        x.at(i, j) += cfg.lr * (grad.at(i, j) - penalty.data[j]);
                }
                check_finite_iterate(x, t);
            }
            out.x_star = std::move(x);
            break;
        }
        case MurSolver::Off:
            break;
    }
    return out;
}

Val build_mur_loss(Graph& g, Val student_probs, Val target_probs_sg) {
    if (g.shape_of(student_probs) != g.shape_of(target_probs_sg))
        throw ShapeError("mur_loss: " + Tensor(g.shape_of(student_probs)).shape_str() + " vs " +
                         Tensor(g.shape_of(target_probs_sg)).shape_str());
    return g.mean(g.square(g.sub(student_probs, target_probs_sg)));
}

}  // namespace sslab
