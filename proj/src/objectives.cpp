#include "sslab/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "sslab/mur.hpp"
#include "sslab/util.hpp"
#include "sslab/vardrop.hpp"

namespace sslab {

void ScheduleSpec::validate() const {
    if (peak < 0.0) throw UsageError("schedule: peak must be >= 0");
    if (ramp_up < 0 || ramp_down < 0 || total < 0) throw UsageError("schedule: negative length");
    if (ramp_up + ramp_down > total)
        throw UsageError("schedule: ramp_up + ramp_down exceeds total steps");
}

double ramp_value(const ScheduleSpec& spec, long t) {
    spec.validate();
    if (t < 0 || t > spec.total) throw UsageError("schedule: step out of range");
    double up = 1.0;
    if (spec.ramp_up > 0) {
        double x = std::min(static_cast<double>(t) / static_cast<double>(spec.ramp_up), 1.0);
        up = std::exp(-5.0 * (1.0 - x) * (1.0 - x));
    }
    double down = 1.0;
    if (spec.ramp_down > 0 && t >= spec.total - spec.ramp_down) {
        double x = static_cast<double>(spec.total - t) / static_cast<double>(spec.ramp_down);
        down = 1.0 - std::exp(-12.5 * x * x);
    }
    return spec.peak * up * down;
}

TeacherState make_teacher(const ParamSet& student, double momentum) {
    if (momentum < 0.0 || momentum > 1.0) throw UsageError("teacher: momentum must be in [0,1]");
    return TeacherState{student, momentum};
}

void ema_update(TeacherState& teacher, const ParamSet& student) {
    if (teacher.params.layers.size() != student.layers.size())
        throw ShapeError("ema_update: teacher/student layer count mismatch");
    double a = teacher.momentum;
    auto blend = [a](Tensor& tgt, const Tensor& src) {
        if (!tgt.same_shape(src))
            throw ShapeError("ema_update: " + tgt.shape_str() + " vs " + src.shape_str());
        for (std::size_t i = 0; i < tgt.numel(); ++i)
            tgt.data[i] = a * tgt.data[i] + (1.0 - a) * src.data[i];
    };
    for (std::size_t l = 0; l < student.layers.size(); ++l) {
        blend(teacher.params.layers[l].w, student.layers[l].w);
        blend(teacher.params.layers[l].b, student.layers[l].b);
        if (student.layers[l].log_sigma2.numel() > 0)
            blend(teacher.params.layers[l].log_sigma2, student.layers[l].log_sigma2);
    }
}

const char* method_name(Method m) {
    switch (m) {
        case Method::Pi: return "pi";
        case Method::Mt: return "mt";
        case Method::Ict: return "ict";
        case Method::Mut: return "mut";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    if (name == "pi") return Method::Pi;
    if (name == "mt") return Method::Mt;
    if (name == "ict") return Method::Ict;
    if (name == "mut") return Method::Mut;
    throw UsageError("unknown method '" + name + "'");
}

Val build_xent(Graph& g, Val log_probs, const Batch& batch) {
    const std::vector<std::size_t> shape = g.shape_of(log_probs);
    if (shape.size() != 2 || shape[0] != batch.n())
        throw ShapeError("xent: log probs " + Tensor(shape).shape_str() + " vs batch of " +
                         std::to_string(batch.n()));
    std::size_t n_labeled = batch.n_labeled();
    if (n_labeled == 0) throw UsageError("xent: batch has no labeled examples");
    Tensor picks(shape);
    for (std::size_t i = 0; i < batch.n(); ++i)
        if (batch.labeled_mask[i])
            picks.at(i, static_cast<std::size_t>(batch.labels[i])) =
                -1.0 / static_cast<double>(n_labeled);
    return g.sum(g.mul(log_probs, g.constant(picks)));
}

Val build_consistency(Graph& g, Val student_probs, Val target_probs) {
    if (g.shape_of(student_probs) != g.shape_of(target_probs))
        throw ShapeError("consistency: " + Tensor(g.shape_of(student_probs)).shape_str() +
                         " vs " + Tensor(g.shape_of(target_probs)).shape_str());
    return g.mean(g.square(g.sub(student_probs, target_probs)));
}

Val build_ict_consistency(Graph& g, const ModelSpec& spec, const ParamVars& student_vars,
                          const ParamSet& teacher, const Tensor& x_i, const Tensor& x_j,
                          const std::vector<double>& mix_lambda, const ForwardOpts& student_opts) {
    if (!x_i.same_shape(x_j))
        throw ShapeError("ict: x_i " + x_i.shape_str() + " vs x_j " + x_j.shape_str());
    std::size_t n = x_i.shape[0], d = x_i.shape[1], k = spec.n_classes();
    if (mix_lambda.size() != n) throw UsageError("ict: need one mixing weight per row pair");
    for (double lam : mix_lambda)
        if (lam < 0.0 || lam > 1.0) throw UsageError("ict: mixing weights must lie in [0,1]");

    Tensor lam_x({n, d}), lam_x_c({n, d}), lam_p({n, k}), lam_p_c({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            lam_x.at(i, j) = mix_lambda[i];
            lam_x_c.at(i, j) = 1.0 - mix_lambda[i];
        }
        for (std::size_t j = 0; j < k; ++j) {
            lam_p.at(i, j) = mix_lambda[i];
            lam_p_c.at(i, j) = 1.0 - mix_lambda[i];
        }
    }
    Val xi = g.constant(x_i);
    Val xj = g.constant(x_j);
    Val mixed = g.add(g.mul(g.constant(lam_x), xi), g.mul(g.constant(lam_x_c), xj));
    Val mixed_probs = g.softmax(build_network(g, spec, student_vars, mixed, student_opts));

    ParamVars teacher_vars = bind_params_const(g, teacher);
    ForwardOpts clean;  // mixup targets use unperturbed teacher predictions
    Val t_i = g.softmax(build_network(g, spec, teacher_vars, xi, clean));
    Val t_j = g.softmax(build_network(g, spec, teacher_vars, xj, clean));
    Val target = g.add(g.mul(g.constant(lam_p), t_i), g.mul(g.constant(lam_p_c), t_j));
    return build_consistency(g, mixed_probs, target);
}

AssembledLoss assemble_loss(Graph& g, const LossInputs& in, const ParamVars& vars) {
    if (!in.spec || !in.params || !in.batch) throw UsageError("loss: missing inputs");
    in.batch->validate(in.spec->n_classes());
    bool needs_teacher = in.consistency_active &&
                         (in.method == Method::Mt || in.method == Method::Ict);
    if (needs_teacher && !in.teacher)
        throw UsageError("loss: method requires a mean teacher");
    if (in.mur_active && !in.x_star) throw UsageError("loss: mur term requires virtual points");

    AssembledLoss out;
    std::mt19937_64 mask_rng(derive_seed(in.seed, 0x6d61736bULL));
    Val x = g.constant(in.batch->inputs);

    // student branch: xent on labeled rows, student side of the consistency
    ForwardOpts student_opts;
    student_opts.noise_on = true;
    student_opts.sample_weights = in.vbi_on;
    student_opts.rng = &mask_rng;
    Val student_logits = build_network(g, *in.spec, vars, x, student_opts);
    Val student_probs = g.softmax(student_logits);
    out.xent = build_xent(g, g.log_softmax(student_logits), *in.batch);
    Val total = out.xent;

    if (in.consistency_active && in.method != Method::Mut) {
        switch (in.method) {
            case Method::Pi: {
                // second pass under fresh perturbations, mean weights, no
                // gradient into the target
                ForwardOpts target_opts;
                target_opts.noise_on = true;
                target_opts.sample_weights = false;
                target_opts.rng = &mask_rng;
                ParamVars target_vars =
                    in.frozen_targets ? bind_params_const(g, *in.frozen_targets) : vars;
                Val pre_sg = g.softmax(build_network(g, *in.spec, target_vars, x, target_opts));
                out.sg_inputs.push_back(pre_sg);
                out.consistency = build_consistency(g, student_probs, g.stop_gradient(pre_sg));
                break;
            }
            case Method::Mt: {
                ParamVars teacher_vars = bind_params_const(g, in.teacher->params);
                ForwardOpts teacher_opts;
                teacher_opts.noise_on = true;
                teacher_opts.sample_weights = false;
                teacher_opts.rng = &mask_rng;
                Val target =
                    g.softmax(build_network(g, *in.spec, teacher_vars, x, teacher_opts));
                out.consistency = build_consistency(g, student_probs, target);
                break;
            }
            case Method::Ict: {
                std::size_t n = in.batch->n();
                std::mt19937_64 ict_rng(derive_seed(in.seed, 0x696374ULL));
                std::vector<std::size_t> perm(n);
                for (std::size_t i = 0; i < n; ++i) perm[i] = i;
                std::shuffle(perm.begin(), perm.end(), ict_rng);
                std::gamma_distribution<double> gamma(in.ict_beta, 1.0);
                std::vector<double> lam(n);
                for (double& v : lam) {
                    double a = gamma(ict_rng), b = gamma(ict_rng);
                    v = a / (a + b);
                }
                Tensor xp({n, in.spec->input_dim()});
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < in.spec->input_dim(); ++j)
                        xp.at(i, j) = in.batch->inputs.at(perm[i], j);
                out.consistency =
                    build_ict_consistency(g, *in.spec, vars, in.teacher->params,
                                          in.batch->inputs, xp, lam, student_opts);
                break;
            }
            case Method::Mut:
                break;
        }
        if (out.consistency.valid())
            total = g.add(total, g.scale(out.consistency, in.lam1));
    }

    if (in.kl_active) {
        if (!in.vbi_on) throw UsageError("loss: kl term requires variational weights");
        out.kl = build_kl_term(g, vars);
        total = g.add(total, g.scale(out.kl, in.lam2));
    }

    if (in.mur_active) {
        // virtual points enter as constants; weights are sampled for the
        // student side while the target is the mean-weight prediction at x0
        Val xs = g.constant(*in.x_star);
        ForwardOpts star_opts;
        star_opts.sample_weights = in.vbi_on;
        Val star_probs = g.softmax(build_network(g, *in.spec, vars, xs, star_opts));

        ParamVars target_vars =
            in.frozen_targets ? bind_params_const(g, *in.frozen_targets) : vars;
        Val pre_sg = g.softmax(build_network(g, *in.spec, target_vars, x, ForwardOpts{}));
        out.sg_inputs.push_back(pre_sg);
        out.mur = build_mur_loss(g, star_probs, g.stop_gradient(pre_sg));
        total = g.add(total, g.scale(out.mur, in.lam3));
    }

    out.total = total;
    return out;
}

StepLoss build_step_loss(const LossInputs& in) {
    StepLoss out;
    out.graph = std::make_unique<Graph>(derive_seed(in.seed, 0x677261706858ULL));
    Graph& g = *out.graph;
    out.vars = bind_params(g, *in.params);
    AssembledLoss parts = assemble_loss(g, in, out.vars);
    out.total = parts.total;
    out.sg_inputs = parts.sg_inputs;
    g.eval(parts.total);

    LossBreakdown& bd = out.breakdown;
    bd.xent = g.value(parts.xent).data[0];
    bd.consistency = parts.consistency.valid() ? g.value(parts.consistency).data[0] : 0.0;
    bd.kl = parts.kl.valid() ? g.value(parts.kl).data[0] : 0.0;
    bd.mur = parts.mur.valid() ? g.value(parts.mur).data[0] : 0.0;
    bd.total = g.value(parts.total).data[0];
    bd.lam1 = parts.consistency.valid() ? in.lam1 : 0.0;
    bd.lam2 = parts.kl.valid() ? in.lam2 : 0.0;
    bd.lam3 = parts.mur.valid() ? in.lam3 : 0.0;
    return out;
}

LossBreakdown combined_loss(const LossInputs& in) { return build_step_loss(in).breakdown; }

LossBreakdown mut_loss(const ModelSpec& spec, const ParamSet& params, const Batch& batch,
                       const MurConfig& mur_cfg, double lam, std::uint64_t seed) {
    LossInputs in;
    in.method = Method::Mut;
    in.spec = &spec;
    in.params = &params;
    in.batch = &batch;
    in.consistency_active = false;
    in.lam3 = lam;
    in.seed = seed;

    Tensor x_star;
    if (mur_cfg.solver != MurSolver::Off && lam != 0.0) {
        std::mt19937_64 solver_rng(derive_seed(seed, 0x736f6c766572ULL));
        x_star = find_virtual_points(spec, params, batch.inputs, mur_cfg, solver_rng).x_star;
        in.mur_active = true;
        in.x_star = &x_star;
    }
    return combined_loss(in);
}

void NesterovSgd::step(ParamSet& params, Graph& g, const ParamVars& vars, double lr) {
    if (!vars.trainable) throw UsageError("optimizer: parameters were bound as constants");
    if (velocity_.empty()) {
        for (const auto& l : params.layers) {
            LayerParams v;
            v.w = Tensor(l.w.shape);
            v.b = Tensor(l.b.shape);
            if (l.log_sigma2.numel() > 0) v.log_sigma2 = Tensor(l.log_sigma2.shape);
            velocity_.push_back(std::move(v));
        }
    }
    auto update = [&](Tensor& p, Tensor& v, const Tensor& grad, double decay) {
        for (std::size_t i = 0; i < p.numel(); ++i) {
            double gi = grad.data[i] + decay * p.data[i];
            if (clip_ > 0.0) gi = std::clamp(gi, -clip_, clip_);
            v.data[i] = mu_ * v.data[i] + gi;
            p.data[i] -= lr * (gi + mu_ * v.data[i]);
        }
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        update(params.layers[l].w, velocity_[l].w, g.adjoint(vars.layers[l].w), wd_);
        update(params.layers[l].b, velocity_[l].b, g.adjoint(vars.layers[l].b), wd_);
        if (params.layers[l].log_sigma2.numel() > 0)
            update(params.layers[l].log_sigma2, velocity_[l].log_sigma2,
                   g.adjoint(vars.layers[l].log_sigma2), 0.0);
    }
}

}  // namespace sslab
