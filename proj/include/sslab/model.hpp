#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sslab/graph.hpp"

namespace sslab {

enum class WeightMode { Deterministic, Variational };

/// MLP classifier description. widths runs [input, hidden..., K].
struct ModelSpec {
    std::vector<std::size_t> widths;
    double leaky_slope = 0.1;
    double input_noise_sigma = 0.0;
    double dropout_rate = 0.0;  // binary dropout after each hidden activation
    WeightMode weight_mode = WeightMode::Deterministic;

    std::size_t input_dim() const { return widths.front(); }
    std::size_t n_classes() const { return widths.back(); }
    std::size_t n_layers() const { return widths.size() - 1; }
    bool variational() const { return weight_mode == WeightMode::Variational; }

    void validate() const;
};

/// Per-layer weights. log_sigma2 is present (same shape as w) only in
/// variational mode.
struct LayerParams {
    Tensor w;  // (in x out)
    Tensor b;  // (out,)
    Tensor log_sigma2;
};

struct ParamSet {
    std::vector<LayerParams> layers;
    bool variational() const {
        return !layers.empty() && layers.front().log_sigma2.numel() > 0;
    }
    std::size_t n_weights() const;
};

/// He-style init scaled for the leaky slope; log_sigma2 starts at -10 so a
/// variational model begins effectively deterministic.
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// Graph handles for one bound ParamSet.
struct ParamVars {
    struct LayerVars {
        Val w, b, log_sigma2;
    };
    std::vector<LayerVars> layers;
    bool trainable = false;
};

ParamVars bind_params(Graph& g, const ParamSet& params);        // variables
ParamVars bind_params_const(Graph& g, const ParamSet& params);  // constants (teacher/targets)

struct ForwardOpts {
    bool noise_on = false;        // input Gaussian noise + binary dropout
    bool sample_weights = false;  // local reparameterization (variational params only)
    std::mt19937_64* rng = nullptr;  // dropout masks; required when noise_on and dropout > 0
};

/// Appends the network to g and returns the logits node (n x K).
/// Binary dropout is skipped in variational mode: sampled weights already
/// perturb the activations, mirroring the replacement of dropout by
/// learned multiplicative weight noise.
Val build_network(Graph& g, const ModelSpec& spec, const ParamVars& vars, Val x,
                  const ForwardOpts& opts);

struct PredictiveOutput {
    Tensor probs;      // (n x K), rows sum to 1
    Tensor log_probs;  // same shape
};

/// Standalone forward pass. With noise_on, input noise and dropout are drawn
/// from `seed` and a variational spec samples weights via local
/// reparameterization; with noise_on false the output is the pure
/// mean-weight function of (params, inputs).
PredictiveOutput forward(const ModelSpec& spec, const ParamSet& params, const Tensor& inputs,
                         bool noise_on, std::uint64_t seed);

/// Frobenius norm of d p(y|x) / d x at one example (noise off, mean weights).
double sensitivity(const ModelSpec& spec, const ParamSet& params, const Tensor& x);

/// Per-example sensitivities for a whole matrix of inputs in K backward passes.
std::vector<double> sensitivity_batch(const ModelSpec& spec, const ParamSet& params,
                                      const Tensor& inputs);

// ---- checkpoints -------------------------------------------------------
// Binary file: u64 layer count, then (u64 in, u64 out) per layer, then the
// scalars (w row-major, b) per layer, then log_sigma2 per layer when
// variational. All values little-endian. A JSON sidecar at <path>.json holds
// the ModelSpec, seed and step.

struct Checkpoint {
    ModelSpec spec;
    ParamSet params;
    std::uint64_t seed = 0;
    long step = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sslab
