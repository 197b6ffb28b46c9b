#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sslab/graph.hpp"
#include "sslab/model.hpp"

namespace sslab {

// Weight posterior q(w_ij) = N(theta_ij, sigma2_ij) with the log-uniform
// prior; alpha_ij = sigma2_ij / theta_ij^2 is the learned dropout rate.

/// z = x*theta + sqrt(x^2 * sigma2) (.) eps with eps ~ N(0,1) drawn from the
/// graph seed. Gradients reach theta through the mean and log_sigma2 through
/// the standard deviation.
Val local_reparam_matmul(Graph& g, Val x, Val theta, Val log_sigma2);

/// Standalone single draw of the reparameterized activations.
Tensor local_reparam_forward(const Tensor& theta, const Tensor& log_sigma2, const Tensor& x,
                             std::uint64_t seed);

/// Closed-form per-weight KL(q || log-uniform) as a function of
/// log alpha = log sigma2 - log theta^2, normalized so KL -> 0 as
/// alpha -> inf. Sigmoid/softplus fit from the variational dropout
/// literature; accurate to ~0.01 nats.
double kl_log_uniform_scalar(double log_alpha);

struct KlTerm {
    double value = 0.0;
    std::vector<double> per_layer;
};

/// Sum of per-weight KL over all variational layers. log alpha is clipped to
/// [-8, 8] to match the trainable term.
KlTerm kl_log_uniform(const ParamSet& params);

/// Same KL as a differentiable graph term (scalar node). theta^2 is floored
/// at 1e-16 inside the log and log alpha is clipped to [-8, 8]; the KL is
/// flat out there and the unclipped d(log alpha)/d(theta) would blow up as
/// weights cross zero.
Val build_kl_term(Graph& g, const ParamVars& vars);

struct SparsityReport {
    double fraction_pruned = 0.0;
    std::vector<Tensor> masks;  // per layer, 1 = kept, 0 = pruned
};

/// Prunes weights with log alpha >= threshold. The default 3 corresponds to
/// a keep probability <= 0.05 (alpha/(1+alpha) >= 0.95 at log alpha >= log 19).
SparsityReport sparsity_report(const ParamSet& params, double threshold = 3.0);

/// Applies a sparsity mask, zeroing pruned weights in place.
void apply_sparsity_mask(ParamSet& params, const SparsityReport& report);

/// Builds the average of n independent stochastic loss samples in one graph;
/// backward through the returned node yields the mean of per-sample gradients.
Val build_expected_loss(Graph& g, const std::function<Val(Graph&)>& sample_loss, int n_samples);

/// Monte-Carlo estimate of E[loss] with n_samples draws seeded by `seed`.
double expected_loss_mc(const std::function<Val(Graph&)>& sample_loss, int n_samples,
                        std::uint64_t seed);

}  // namespace sslab
