#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sslab/data.hpp"
#include "sslab/graph.hpp"
#include "sslab/model.hpp"
#include "sslab/mur.hpp"

namespace sslab {

// ---- ramp schedules --------------------------------------------------------

/// Coefficient schedule: sigmoid ramp-up e^{-5(1-x)^2} over the first ramp_up
/// steps, ramp-down factor 1-e^{-12.5 x^2} (x = remaining fraction) over the
/// last ramp_down steps, so the value decays to 0 at step total.
struct ScheduleSpec {
    double peak = 0.0;
    long ramp_up = 0;
    long ramp_down = 0;
    long total = 0;

    void validate() const;
    bool active() const { return peak != 0.0; }
};

double ramp_value(const ScheduleSpec& spec, long t);

// ---- mean teacher ------------------------------------------------------------

struct TeacherState {
    ParamSet params;  // exponential moving average of the student
    double momentum = 0.99;
};

TeacherState make_teacher(const ParamSet& student, double momentum);

/// theta_bar <- momentum * theta_bar + (1 - momentum) * theta, applied once
/// per step after the optimizer update. Never part of the loss graph.
void ema_update(TeacherState& teacher, const ParamSet& student);

// ---- methods and the combined loss ------------------------------------------

enum class Method { Pi, Mt, Ict, Mut };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct LossBreakdown {
    double xent = 0.0;
    double consistency = 0.0;
    double kl = 0.0;
    double mur = 0.0;
    double total = 0.0;
    double lam1 = 0.0, lam2 = 0.0, lam3 = 0.0;
};

/// Everything build_step_loss needs for one training step. Coefficients are
/// already ramped; the *_active flags are config-level (a term with an
/// identically-zero schedule is skipped entirely, so reduced configurations
/// consume the same random draws and reproduce each other bit for bit).
struct LossInputs {
    Method method = Method::Pi;
    const ModelSpec* spec = nullptr;
    const ParamSet* params = nullptr;
    const TeacherState* teacher = nullptr;  // MT / ICT
    const Batch* batch = nullptr;
    bool vbi_on = false;
    bool consistency_active = true;
    bool kl_active = false;
    bool mur_active = false;
    double lam1 = 0.0, lam2 = 0.0, lam3 = 0.0;
    const Tensor* x_star = nullptr;  // (n x d), required when mur_active
    double ict_beta = 1.0;           // Beta(beta, beta) mixing
    std::uint64_t seed = 0;

    // Gradient checking only: binds the stop-gradient target branches to this
    // constant snapshot so finite differences see the same function the
    // analytic gradient differentiates (targets held fixed). Training leaves
    // it null and targets share the live student parameters.
    const ParamSet* frozen_targets = nullptr;
};

/// Loss nodes assembled into an existing graph against already-bound student
/// parameters. Invalid Vals mark skipped terms.
struct AssembledLoss {
    Val total;
    Val xent, consistency, kl, mur;
    std::vector<Val> sg_inputs;  // nodes that must receive zero adjoint
};

AssembledLoss assemble_loss(Graph& g, const LossInputs& in, const ParamVars& vars);

struct StepLoss {
    std::unique_ptr<Graph> graph;
    Val total;
    ParamVars vars;  // trainable student parameters
    LossBreakdown breakdown;
    std::vector<Val> sg_inputs;  // stop-gradient protected branches
};

StepLoss build_step_loss(const LossInputs& in);

/// Convenience wrapper when only the value is needed.
LossBreakdown combined_loss(const LossInputs& in);

/// L_xent + lam * L_MUR; no consistency branch. Runs the virtual point
/// solver on the batch first.
LossBreakdown mut_loss(const ModelSpec& spec, const ParamSet& params, const Batch& batch,
                       const MurConfig& mur_cfg, double lam, std::uint64_t seed);

// ---- loss pieces (graph builders shared with tests) --------------------------

/// Mean negative log-probability of the true class over labeled rows.
Val build_xent(Graph& g, Val log_probs, const Batch& batch);

/// Mean over batch and classes of squared probability differences; the target
/// must be a constant branch or already wrapped in stop_gradient.
Val build_consistency(Graph& g, Val student_probs, Val target_probs);

/// Interpolation consistency: student probabilities at the row-wise mixed
/// inputs against the same mixture of teacher predictions at x_i and x_j.
Val build_ict_consistency(Graph& g, const ModelSpec& spec, const ParamVars& student_vars,
                          const ParamSet& teacher, const Tensor& x_i, const Tensor& x_j,
                          const std::vector<double>& mix_lambda, const ForwardOpts& student_opts);

// ---- optimizer ----------------------------------------------------------------

/// Nesterov momentum SGD: v <- mu v + g ; p <- p - lr (g + mu v).
/// Weight decay is added to the gradients of w and b, never to log_sigma2.
/// Per-component gradients are clipped to +/- grad_clip before the update;
/// the KL term hands near-zero weights 1/theta-sized kicks that otherwise
/// destabilize fixed-rate momentum training.
class NesterovSgd {
public:
    NesterovSgd(double momentum, double weight_decay, double grad_clip = 5.0)
        : mu_(momentum), wd_(weight_decay), clip_(grad_clip) {}
    void step(ParamSet& params, Graph& g, const ParamVars& vars, double lr);

private:
    double mu_, wd_, clip_;
    std::vector<LayerParams> velocity_;
};

}  // namespace sslab
