#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "sslab/model.hpp"

namespace sslab {

enum class MurSolver { Direct, Pga, LagrangianGa, Random, Off };

const char* mur_solver_name(MurSolver s);
MurSolver mur_solver_from_name(const std::string& name);

struct MurConfig {
    double radius = 0.0;  // largest allowed ||x* - x0||
    MurSolver solver = MurSolver::Direct;
    double lr = 0.3;  // iterative solvers
    int steps = 5;

    void validate() const;
};

struct TraceEntry {
    Tensor x;
    double entropy = 0.0;
    double dist = 0.0;  // ||x - x0||
};

struct VirtualPointResult {
    Tensor x_star;
    std::vector<TraceEntry> trace;
    double g0_norm = 0.0;
    bool degenerate = false;  // ||g0|| below tolerance; caller falls back to random
};

/// Shannon entropy -sum p log p (natural log) of one probability row,
/// entries clamped at 1e-12.
double predictive_entropy(const Tensor& prob_row);

/// d H(p(y|x)) / dx at x0 (noise off, mean weights), one backward pass.
Tensor entropy_gradient(const ModelSpec& spec, const ParamSet& params, const Tensor& x0);

/// Row-wise entropy gradients for a batch in one backward pass.
Tensor entropy_gradient_batch(const ModelSpec& spec, const ParamSet& params, const Tensor& x0s);

/// Entropy of the mean-weight predictive distribution at a single point.
double entropy_at(const ModelSpec& spec, const ParamSet& params, const Tensor& x);

/// Closed-form step to the sphere: x* = x0 + r g0/||g0||.
VirtualPointResult virtual_point_direct(const Tensor& x0, const Tensor& g0, double r);

/// Projected gradient ascent on the entropy within the radius-r ball,
/// starting from x0; every iterate satisfies the constraint.
VirtualPointResult virtual_point_pga(const ModelSpec& spec, const ParamSet& params,
                                     const Tensor& x0, const MurConfig& cfg);

/// Vanilla gradient ascent on the Lagrangian relaxation
///   F(x) = H(p(y|x)) - lambda*(x) (||x - x0|| - r),
/// lambda*(x) = ||x - x0|| ||g0|| / r. Iterates may leave the ball. The first
/// iterate is nudged 1e-3 r off x0 to avoid the gradient singularity there.
VirtualPointResult virtual_point_lagrangian_ga(const ModelSpec& spec, const ParamSet& params,
                                               const Tensor& x0, const MurConfig& cfg,
                                               std::uint64_t seed);

/// lambda*(x) = ||x - x0|| ||g0|| / r; equals ||g0|| on the sphere.
double lagrangian_lambda_star(double dist, double g0_norm, double r);

/// Penalty part of dF/dx: ||g0|| (x - x0)/r (2 - r/||x - x0||); the ascent
/// step adds lr * (f'(x) - penalty).
Tensor lagrangian_penalty_gradient(const Tensor& x, const Tensor& x0, double g0_norm, double r);

/// Uniform point on the radius-r sphere around x0 (normalized Gaussian).
Tensor random_point_on_sphere(const Tensor& x0, double r, std::mt19937_64& rng);

/// Batched solver dispatch for the training loop. Degenerate rows fall back
/// to a random point on the sphere.
struct BatchVirtualPoints {
    Tensor x_star;                 // (n x d)
    std::vector<double> g0_norms;  // per row
    int n_degenerate = 0;
};
BatchVirtualPoints find_virtual_points(const ModelSpec& spec, const ParamSet& params,
                                       const Tensor& x0s, const MurConfig& cfg,
                                       std::mt19937_64& rng);

/// Mean over batch and classes of (p_student - p_target)^2; the target node
/// must already carry stop-gradient (or be a constant).
Val build_mur_loss(Graph& g, Val student_probs, Val target_probs_sg);

}  // namespace sslab
