#include "sslab/vardrop.hpp"

#include <algorithm>
#include <cmath>

#include "sslab/util.hpp"

namespace sslab {

Val local_reparam_matmul(Graph& g, Val x, Val theta, Val log_sigma2) {
    // copies: adding nodes below reallocates the graph's node storage
    const std::vector<std::size_t> xs = g.shape_of(x);
    const std::vector<std::size_t> ts = g.shape_of(theta);
    if (ts != g.shape_of(log_sigma2))
        throw ShapeError("local_reparam: theta " + Tensor(ts).shape_str() + " vs log_sigma2 " +
                         Tensor(g.shape_of(log_sigma2)).shape_str());
    if (xs.size() != 2 || ts.size() != 2 || xs[1] != ts[0])
        throw ShapeError("local_reparam: x " + Tensor(xs).shape_str() + " vs theta " +
                         Tensor(ts).shape_str());

    Val nu = g.matmul(x, theta);
    Val omega2 = g.matmul(g.square(x), g.exp(log_sigma2));
    // sqrt has the zero subgradient at 0, so an all-zero row stays exactly
    // deterministic instead of producing 0 * inf in the backward pass.
    Val omega = g.sqrt(omega2);
    Val eps = g.gaussian_noise(g.constant(Tensor({xs[0], ts[1]})), 1.0);
    return g.add(nu, g.mul(omega, eps));
}

Tensor local_reparam_forward(const Tensor& theta, const Tensor& log_sigma2, const Tensor& x,
                             std::uint64_t seed) {
    Graph g(seed);
    Tensor row = x;
    if (row.shape.size() == 1) row.shape = {1, row.shape[0]};
    Val z = local_reparam_matmul(g, g.constant(row), g.constant(theta), g.constant(log_sigma2));
    Tensor out = g.eval(z);
    if (x.shape.size() == 1) out.shape = {out.shape[1]};
    return out;
}

// Sigmoid/softplus fit of -KL against the log-uniform prior; shifted by k1
// so the KL vanishes in the alpha -> inf (prior-matching) limit.
double kl_log_uniform_scalar(double log_alpha) {
    constexpr double k1 = 0.63576, k2 = 1.87320, k3 = 1.48695;
    double sig = 1.0 / (1.0 + std::exp(-(k2 + k3 * log_alpha)));
    double softplus_neg = std::max(-log_alpha, 0.0) + std::log1p(std::exp(-std::abs(log_alpha)));
    return k1 - k1 * sig + 0.5 * softplus_neg;
}

namespace {
constexpr double kThetaSqFloor = 1e-16;
// log alpha is clipped in the trainable KL term: outside this band the KL is
// flat anyway and the d(log alpha)/d(theta) = -2/theta factor would hand
// near-zero weights unbounded gradients.
constexpr double kLogAlphaClip = 8.0;
}

KlTerm kl_log_uniform(const ParamSet& params) {
    if (!params.variational())
        throw UsageError("kl_log_uniform: model has no variational layers");
    KlTerm term;
    for (const auto& l : params.layers) {
        double layer_kl = 0.0;
        for (std::size_t i = 0; i < l.w.numel(); ++i) {
            double log_alpha =
                l.log_sigma2.data[i] - std::log(l.w.data[i] * l.w.data[i] + kThetaSqFloor);
            log_alpha = std::clamp(log_alpha, -kLogAlphaClip, kLogAlphaClip);
            layer_kl += kl_log_uniform_scalar(log_alpha);
        }
        term.per_layer.push_back(layer_kl);
        term.value += layer_kl;
    }
    return term;
}

Val build_kl_term(Graph& g, const ParamVars& vars) {
    constexpr double k1 = 0.63576, k2 = 1.87320, k3 = 1.48695;
    Val total{};
    for (const auto& lv : vars.layers) {
        if (!lv.log_sigma2.valid())
            throw UsageError("build_kl_term: layer has no log_sigma2 parameters");
        const std::vector<std::size_t> ws = g.shape_of(lv.w);
        Val theta_sq = g.add(g.square(lv.w), g.constant(Tensor(ws, kThetaSqFloor)));
        Val log_alpha = g.clamp(g.sub(lv.log_sigma2, g.log(theta_sq)), -kLogAlphaClip,
                                kLogAlphaClip);
        Val sig = g.sigmoid(g.add(g.scale(log_alpha, k3), g.constant(Tensor(ws, k2))));
        Val kl = g.add(g.scale(sig, -k1), g.constant(Tensor(ws, k1)));
        kl = g.add(kl, g.scale(g.softplus(g.scale(log_alpha, -1.0)), 0.5));
        Val layer_sum = g.sum(kl);
        total = total.valid() ? g.add(total, layer_sum) : layer_sum;
    }
    return total;
}

SparsityReport sparsity_report(const ParamSet& params, double threshold) {
    if (!params.variational())
        throw UsageError("sparsity_report: model has no variational layers");
    SparsityReport report;
    std::size_t pruned = 0, total = 0;
    for (const auto& l : params.layers) {
        Tensor mask(l.w.shape, 1.0);
        for (std::size_t i = 0; i < l.w.numel(); ++i) {
            double log_alpha =
                l.log_sigma2.data[i] - std::log(l.w.data[i] * l.w.data[i] + kThetaSqFloor);
            if (log_alpha >= threshold) {
                mask.data[i] = 0.0;
                ++pruned;
            }
        }
        total += l.w.numel();
        report.masks.push_back(std::move(mask));
    }
    report.fraction_pruned = total > 0 ? static_cast<double>(pruned) / static_cast<double>(total)
                                       : 0.0;
    return report;
}

void apply_sparsity_mask(ParamSet& params, const SparsityReport& report) {
    if (report.masks.size() != params.layers.size())
        throw UsageError("apply_sparsity_mask: mask/layer count mismatch");
    for (std::size_t l = 0; l < params.layers.size(); ++l)
        for (std::size_t i = 0; i < params.layers[l].w.numel(); ++i)
            params.layers[l].w.data[i] *= report.masks[l].data[i];
}

Val build_expected_loss(Graph& g, const std::function<Val(Graph&)>& sample_loss, int n_samples) {
    if (n_samples < 1) throw UsageError("expected_loss: need n_samples >= 1");
    Val acc = sample_loss(g);
    if (!g.eval(acc).is_scalar()) throw UsageError("expected_loss: sample loss must be scalar");
    for (int s = 1; s < n_samples; ++s) acc = g.add(acc, sample_loss(g));
    return g.scale(acc, 1.0 / static_cast<double>(n_samples));
}

double expected_loss_mc(const std::function<Val(Graph&)>& sample_loss, int n_samples,
                        std::uint64_t seed) {
    Graph g(seed);
    Val root = build_expected_loss(g, sample_loss, n_samples);
    return g.eval(root).data[0];
}

}  // namespace sslab
