#include "sslab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "sslab/serialize.hpp"
#include "sslab/util.hpp"
#include "sslab/vardrop.hpp"

namespace sslab {

void ModelSpec::validate() const {
    if (widths.size() < 2) throw UsageError("model: need at least input and output widths");
    for (std::size_t w : widths)
        if (w == 0) throw UsageError("model: zero layer width");
    if (n_classes() < 2) throw UsageError("model: class count must be >= 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw UsageError("model: dropout rate must lie in [0,1)");
    if (input_noise_sigma < 0.0) throw UsageError("model: negative input noise sigma");
}

std::size_t ParamSet::n_weights() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.numel();
    return n;
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ParamSet params;
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
        std::size_t in = spec.widths[l], out = spec.widths[l + 1];
        LayerParams lp;
        lp.w = Tensor({in, out});
        double gain = std::sqrt(2.0 / (1.0 + spec.leaky_slope * spec.leaky_slope));
        double std_dev = gain / std::sqrt(static_cast<double>(in));
        for (double& v : lp.w.data) v = std_dev * normal(rng);
        lp.b = Tensor({out});
        if (spec.variational()) lp.log_sigma2 = Tensor({in, out}, -10.0);
        params.layers.push_back(std::move(lp));
    }
    return params;
}

namespace {

ParamVars bind(Graph& g, const ParamSet& params, bool trainable) {
    ParamVars vars;
    vars.trainable = trainable;
    for (const auto& l : params.layers) {
        ParamVars::LayerVars lv;
        lv.w = trainable ? g.variable(l.w) : g.constant(l.w);
        lv.b = trainable ? g.variable(l.b) : g.constant(l.b);
        if (l.log_sigma2.numel() > 0)
            lv.log_sigma2 = trainable ? g.variable(l.log_sigma2) : g.constant(l.log_sigma2);
        vars.layers.push_back(lv);
    }
    return vars;
}

Tensor dropout_mask(std::size_t rows, std::size_t cols, double rate, std::mt19937_64& rng) {
    Tensor mask({rows, cols});
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double keep_scale = 1.0 / (1.0 - rate);  // inverted scaling: eval needs no rescale
    for (double& v : mask.data) v = uni(rng) < rate ? 0.0 : keep_scale;
    return mask;
}

}  // namespace

ParamVars bind_params(Graph& g, const ParamSet& params) { return bind(g, params, true); }
ParamVars bind_params_const(Graph& g, const ParamSet& params) { return bind(g, params, false); }

Val build_network(Graph& g, const ModelSpec& spec, const ParamVars& vars, Val x,
                  const ForwardOpts& opts) {
    if (vars.layers.size() != spec.n_layers())
        throw UsageError("build_network: params do not match the model spec");
    const std::vector<std::size_t> xshape = g.shape_of(x);  // copy, node storage may grow
    if (xshape.size() != 2 || xshape[1] != spec.input_dim())
        throw ShapeError("build_network: input (n x " +
                         std::to_string(xshape.size() == 2 ? xshape[1] : 0) +
                         ") vs expected (n x " + std::to_string(spec.input_dim()) + ")");

    bool sample = opts.sample_weights && spec.variational();
    bool use_dropout = opts.noise_on && spec.dropout_rate > 0.0 && !spec.variational();
    if (use_dropout && opts.rng == nullptr)
        throw UsageError("build_network: dropout requires an rng");

    Val h = x;
    if (opts.noise_on && spec.input_noise_sigma > 0.0)
        h = g.gaussian_noise(h, spec.input_noise_sigma);

    for (std::size_t l = 0; l < spec.n_layers(); ++l) {
        const auto& lv = vars.layers[l];
        Val z = sample ? local_reparam_matmul(g, h, lv.w, lv.log_sigma2)
                       : g.matmul(h, lv.w);
        z = g.add_bias(z, lv.b);
        if (l + 1 == spec.n_layers()) return z;  // logits
        h = g.leaky_relu(z, spec.leaky_slope);
        if (use_dropout) {
            Val mask = g.constant(dropout_mask(xshape[0], spec.widths[l + 1], spec.dropout_rate,
                                               *opts.rng));
            h = g.mul(h, mask);
        }
    }
    throw UsageError("build_network: unreachable");
}

PredictiveOutput forward(const ModelSpec& spec, const ParamSet& params, const Tensor& inputs,
                         bool noise_on, std::uint64_t seed) {
    Graph g(seed);
    std::mt19937_64 rng(derive_seed(seed, 0x64726f70ULL));
    ParamVars vars = bind_params_const(g, params);
    ForwardOpts opts;
    opts.noise_on = noise_on;
    opts.sample_weights = noise_on;
    opts.rng = &rng;
    Val logits = build_network(g, spec, vars, g.constant(inputs), opts);
    Val probs = g.softmax(logits);
    Val log_probs = g.log_softmax(logits);
    g.eval(probs);
    PredictiveOutput out;
    out.probs = g.value(probs);
    out.log_probs = g.eval(log_probs);
    return out;
}

std::vector<double> sensitivity_batch(const ModelSpec& spec, const ParamSet& params,
                                      const Tensor& inputs) {
    std::size_t n = inputs.shape[0];
    std::size_t k = spec.n_classes();
    Graph g(0);
    ParamVars vars = bind_params_const(g, params);
    Val x = g.variable(inputs);
    Val logits = build_network(g, spec, vars, x, ForwardOpts{});
    Val probs = g.softmax(logits);

    // One backward per class; rows are independent, so the adjoint of x holds
    // the k-th Jacobian row of every example at once.
    std::vector<Val> class_sums;
    for (std::size_t c = 0; c < k; ++c) {
        Tensor sel({n, k});
        for (std::size_t i = 0; i < n; ++i) sel.at(i, c) = 1.0;
        class_sums.push_back(g.sum(g.mul(probs, g.constant(sel))));
    }

    std::vector<double> acc(n, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        g.eval(class_sums[c]);
        g.backward(class_sums[c]);
        Tensor jrow = g.adjoint(x);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < inputs.shape[1]; ++j)
                acc[i] += jrow.at(i, j) * jrow.at(i, j);
    }
    for (double& v : acc) v = std::sqrt(v);
    return acc;
}

double sensitivity(const ModelSpec& spec, const ParamSet& params, const Tensor& x) {
    Tensor row = x;
    if (row.shape.size() == 1) row.shape = {1, row.shape[0]};
    if (row.shape.size() != 2 || row.shape[0] != 1)
        throw ShapeError("sensitivity: expected a single example, got " + x.shape_str());
    return sensitivity_batch(spec, params, row)[0];
}

// ---- checkpoints ---------------------------------------------------------

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(os, bits);
}

double get_f64(std::istream& is) {
    std::uint64_t bits = get_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

void put_tensor(std::ostream& os, const Tensor& t) {
    for (double v : t.data) put_f64(os, v);
}

void get_tensor(std::istream& is, Tensor& t) {
    for (double& v : t.data) v = get_f64(is);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UsageError("checkpoint: cannot open " + path + " for writing");
    put_u64(os, ckpt.params.layers.size());
    for (const auto& l : ckpt.params.layers) {
        put_u64(os, l.w.shape[0]);
        put_u64(os, l.w.shape[1]);
    }
    for (const auto& l : ckpt.params.layers) {
        put_tensor(os, l.w);
        put_tensor(os, l.b);
    }
    if (ckpt.params.variational())
        for (const auto& l : ckpt.params.layers) put_tensor(os, l.log_sigma2);
    os.flush();
    if (!os) throw UsageError("checkpoint: write failed for " + path);

    nlohmann::json meta;
    meta["spec"] = model_spec_to_json(ckpt.spec);
    meta["seed"] = ckpt.seed;
    meta["step"] = ckpt.step;
    std::ofstream ms(path + ".json");
    ms << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream ms(path + ".json");
    if (!ms) throw UsageError("checkpoint: missing sidecar " + path + ".json");
    nlohmann::json meta = nlohmann::json::parse(ms);

    Checkpoint ckpt;
    ckpt.spec = model_spec_from_json(meta.at("spec"));
    ckpt.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.step = meta.at("step").get<long>();

    std::ifstream is(path, std::ios::binary);
    if (!is) throw UsageError("checkpoint: cannot open " + path);
    std::size_t n_layers = get_u64(is);
    std::vector<std::pair<std::size_t, std::size_t>> dims;
    for (std::size_t l = 0; l < n_layers; ++l) {
        std::size_t in = get_u64(is), out = get_u64(is);
        dims.emplace_back(in, out);
    }
    for (auto [in, out] : dims) {
        LayerParams lp;
        lp.w = Tensor({in, out});
        lp.b = Tensor({out});
        get_tensor(is, lp.w);
        get_tensor(is, lp.b);
        ckpt.params.layers.push_back(std::move(lp));
    }
    if (ckpt.spec.variational())
        for (auto& l : ckpt.params.layers) {
            l.log_sigma2 = Tensor(l.w.shape);
            get_tensor(is, l.log_sigma2);
        }
    if (!is) throw UsageError("checkpoint: truncated file " + path);
    return ckpt;
}

}  // namespace sslab
