// Acceptance suite: runs every gate end to end and prints one line per
// criterion. Soft gates (9 and 11) report their measurement and never fail
// the binary; every other criterion is hard.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "helpers.hpp"
#include "loss_check.hpp"
#include "sslab/grad_check.hpp"
#include "sslab/harness.hpp"
#include "sslab/mur.hpp"
#include "sslab/util.hpp"
#include "sslab/vardrop.hpp"

using namespace sslab;

namespace {

int failures = 0;

void report(int criterion, bool pass, bool soft, const std::string& detail) {
    const char* status = pass ? "PASS" : (soft ? "SOFT-FAIL" : "FAIL");
    std::printf("criterion %2d: %-9s %s\n", criterion, status, detail.c_str());
    std::fflush(stdout);
    if (!pass && !soft) ++failures;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    return buf;
}

std::vector<std::uint64_t> ten_seeds() { return {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}; }

// ---------------------------------------------------------------- criterion 1

void criterion_1_gradient_integrity() {
    auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(41);
    std::uniform_int_distribution<std::size_t> widths(3, 6);
    double worst = 0.0;
    int configs = 0;

    struct Family {
        Method method;
        bool vbi, teacher, mur, kl;
    };
    std::vector<Family> families = {
        {Method::Pi, false, false, false, false},   // pi consistency
        {Method::Mt, false, true, false, false},    // mean teacher consistency
        {Method::Mt, true, true, true, true},       // the full combined objective
        {Method::Pi, false, false, true, false},    // mur term through pi
        {Method::Mut, false, false, true, false},   // mut
        {Method::Ict, false, true, false, false},   // ict consistency
    };

    for (const Family& fam : families) {
        for (int rep = 0; rep < 4; ++rep) {
            std::size_t d = 2 + rep % 2, k = 2 + rep % 2, n = 4;
            ModelSpec spec;
            spec.widths = {d, widths(rng), k};
            spec.input_noise_sigma = 0.15;
            spec.dropout_rate = fam.vbi ? 0.0 : 0.2;
            spec.weight_mode = fam.vbi ? WeightMode::Variational : WeightMode::Deterministic;
            ParamSet params = init_params(spec, rng());
            if (fam.vbi)
                for (auto& l : params.layers)
                    for (double& v : l.log_sigma2.data) v = -2.0;
            TeacherState teacher = make_teacher(init_params(spec, rng()), 0.99);

            Batch batch;
            batch.inputs = test::rand_tensor({n, d}, rng);
            for (std::size_t i = 0; i < n; ++i) {
                bool labeled = i < 2;
                batch.labeled_mask.push_back(labeled);
                batch.labels.push_back(labeled ? static_cast<int>(i % k) : -1);
            }
            Tensor x_star = test::rand_tensor({n, d}, rng);

            LossInputs in;
            in.method = fam.method;
            in.spec = &spec;
            in.params = &params;
            in.teacher = fam.teacher ? &teacher : nullptr;
            in.batch = &batch;
            in.vbi_on = fam.vbi;
            in.consistency_active = fam.method != Method::Mut;
            in.kl_active = fam.kl;
            in.mur_active = fam.mur;
            in.lam1 = 2.0;
            in.lam2 = 0.05;
            in.lam3 = 1.5;
            in.x_star = fam.mur ? &x_star : nullptr;
            in.seed = rng();
            in.frozen_targets = &params;

            test::LossCheck check = test::make_loss_check(in);
            for (std::size_t leaf = 0; leaf < check.leaves.size(); ++leaf)
                worst = std::max(worst, grad_check(check.builder, check.leaves, leaf, 1e-6, 7));
            ++configs;
        }
    }

    // the KL term alone
    for (int rep = 0; rep < 4; ++rep) {
        Tensor theta = test::rand_tensor({3, 4}, rng, 0.2, 1.3);
        Tensor log_s2 = test::rand_tensor({3, 4}, rng, -3.0, 0.5);
        auto builder = [](Graph& g, const std::vector<Val>& v) {
            ParamVars vars;
            vars.trainable = true;
            vars.layers.push_back({v[0], Val{}, v[1]});
            return build_kl_term(g, vars);
        };
        worst = std::max(worst, grad_check(builder, {theta, log_s2}, 0));
        worst = std::max(worst, grad_check(builder, {theta, log_s2}, 1));
        ++configs;
    }

    double secs = elapsed_s(t0);
    report(1, worst <= 1e-4 && configs >= 20 && secs < 60.0,
           false,
           fmt("gradient checks: %d configs, max rel err %.3g, %.1fs", configs, worst, secs));
}

// ---------------------------------------------------------------- criterion 2

void criterion_2_direct_point_oracle() {
    std::mt19937_64 rng(43);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    int violations = 0;
    double worst_sphere = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t d = 2 + trial % 4;
        Tensor x0 = test::randn_tensor({d}, rng);
        Tensor g0 = test::randn_tensor({d}, rng);
        double r = 0.2 + 2.0 * uni(rng);
        auto res = virtual_point_direct(x0, g0, r);
        Tensor offset = res.x_star;
        for (std::size_t i = 0; i < d; ++i) offset.data[i] -= x0.data[i];
        worst_sphere = std::max(worst_sphere, std::abs(norm2(offset) - r));
        double star_value = dot(g0, offset);
        for (int k = 0; k < 1000; ++k) {
            Tensor u({d});
            for (double& v : u.data) v = normal(rng);
            double scale = r * std::pow(uni(rng), 1.0 / static_cast<double>(d)) / norm2(u);
            double candidate = 0.0;
            for (std::size_t i = 0; i < d; ++i) candidate += g0.data[i] * scale * u.data[i];
            if (candidate > star_value) ++violations;
        }
    }
    report(2, violations == 0 && worst_sphere <= 1e-9, false,
           fmt("linearized optimality: %d violations over 20x1000 in-ball points, "
               "max sphere residual %.2g",
               violations, worst_sphere));
}

// ---------------------------------------------------------------- criterion 3

void criterion_3_solver_quality() {
    ModelSpec spec = test::logistic2d_spec();
    ParamSet params = test::logistic2d_params();
    Tensor x0 = test::logistic2d_x0();
    double r = test::logistic2d_radius();
    double grid_max = test::grid_search_max_entropy(spec, params, x0, r);

    MurConfig pga_cfg{r, MurSolver::Pga, 0.3, 5};
    auto pga = virtual_point_pga(spec, params, x0, pga_cfg);
    double pga_entropy = entropy_at(spec, params, pga.x_star);
    double worst_constraint = 0.0;
    for (const auto& e : pga.trace) worst_constraint = std::max(worst_constraint, e.dist - r);

    MurConfig laga_cfg{r, MurSolver::LagrangianGa, 0.1, 8};
    auto laga = virtual_point_lagrangian_ga(spec, params, x0, laga_cfg, 7);
    double laga_entropy = entropy_at(spec, params, laga.x_star);

    bool pass = pga_entropy >= 0.95 * grid_max && laga_entropy >= 0.95 * grid_max &&
                worst_constraint <= 1e-9;
    report(3, pass, false,
           fmt("grid max %.5f, pga %.5f (%.1f%%), laga %.5f (%.1f%%), "
               "max pga constraint excess %.2g",
               grid_max, pga_entropy, 100.0 * pga_entropy / grid_max, laga_entropy,
               100.0 * laga_entropy / grid_max, worst_constraint));
}

// ---------------------------------------------------------------- criterion 4

void criterion_4_local_reparam() {
    auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(47);
    const std::size_t draws = 100000;
    int bad = 0, comparisons = 0;
    for (int layer = 0; layer < 10; ++layer) {
        std::size_t m = 2 + layer % 3, n = 2 + (layer / 2) % 3;
        Tensor theta = test::rand_tensor({m, n}, rng);
        Tensor log_s2 = test::rand_tensor({m, n}, rng, -3.0, 0.0);
        Tensor x = test::rand_tensor({m}, rng, -2.0, 2.0);

        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> mean(n, 0.0), m2(n, 0.0);
        for (std::size_t s = 0; s < draws; ++s)
            for (std::size_t j = 0; j < n; ++j) {
                double z = 0.0;
                for (std::size_t i = 0; i < m; ++i)
                    z += (theta.at(i, j) + std::exp(0.5 * log_s2.at(i, j)) * normal(rng)) *
                         x.data[i];
                double delta = z - mean[j];
                mean[j] += delta / static_cast<double>(s + 1);
                m2[j] += delta * (z - mean[j]);
            }
        for (std::size_t j = 0; j < n; ++j) {
            double nu = 0.0, omega2 = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                nu += theta.at(i, j) * x.data[i];
                omega2 += std::exp(log_s2.at(i, j)) * x.data[i] * x.data[i];
            }
            double var = m2[j] / static_cast<double>(draws - 1);
            double se_mean = std::sqrt(omega2 / draws);
            double se_var = omega2 * std::sqrt(2.0 / (draws - 1.0));
            if (std::abs(mean[j] - nu) > 4.0 * se_mean) ++bad;
            if (std::abs(var - omega2) > 4.0 * se_var) ++bad;
            comparisons += 2;
        }
    }
    double secs = elapsed_s(t0);
    report(4, bad == 0 && secs < 60.0, false,
           fmt("analytic moments vs weight-sampling oracle: %d/%d outside 4 SE, %.1fs", bad,
               comparisons, secs));
}

// ---------------------------------------------------------------- criterion 5

void criterion_5_kl_correctness() {
    const std::size_t samples = 4000000;
    std::mt19937_64 rng(53);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> eps(samples);
    for (double& e : eps) e = normal(rng);

    auto kl_mc = [&](double log_alpha) {
        double sa = std::exp(0.5 * log_alpha);
        double acc = 0.0;
        for (double e : eps) acc += std::log(std::abs(1.0 + sa * e)) - std::log(std::abs(e));
        return -0.5 * log_alpha + acc / static_cast<double>(samples);
    };

    double worst = 0.0;
    bool monotone = true;
    double prev_cf = kl_log_uniform_scalar(-4.0);
    for (double la = -4.0; la <= 4.0 + 1e-9; la += 0.5) {
        double cf = kl_log_uniform_scalar(la);
        worst = std::max(worst, std::abs(cf - kl_mc(la)));
        if (la > -4.0 && cf > prev_cf) monotone = false;
        prev_cf = cf;
    }
    report(5, worst <= 0.02 && monotone, false,
           fmt("closed form vs %zu-sample MC on log alpha in [-4,4]: max |diff| %.4f nats, "
               "monotone %s",
               samples, worst, monotone ? "yes" : "no"));
}

// ---------------------------------------------------------------- criterion 6

std::vector<std::string> csv_without_wall(const ExperimentConfig& cfg, std::uint64_t seed) {
    std::ostringstream os;
    run_single(cfg, seed, &os);
    std::vector<std::string> rows;
    std::stringstream ss(os.str());
    for (std::string line; std::getline(ss, line);)
        rows.push_back(line.substr(0, line.rfind(',')));
    return rows;
}

ExperimentConfig reduction_base() {
    ExperimentConfig cfg;
    cfg.n_train = 120;
    cfg.total_steps = 300;
    cfg.ramp_up = 50;
    cfg.ramp_down = 80;
    cfg.eval_every = 50;
    cfg.grad_clip = 1.0;
    return cfg;
}

void criterion_6_reduction_lattice() {
    bool all = true;
    std::string detail;

    {  // mut == pi+mur with a zero consistency schedule
        ExperimentConfig mut = reduction_base();
        mut.method = Method::Mut;
        mut.mur_solver = MurSolver::Direct;
        mut.radius = 0.4;
        mut.lam3_peak = 2.0;
        ExperimentConfig pi = mut;
        pi.method = Method::Pi;
        pi.lam1_peak = 0.0;
        bool ok = csv_without_wall(mut, 3) == csv_without_wall(pi, 3);
        all = all && ok;
        detail += fmt("mut==pi+mur(lam1=0): %s", ok ? "identical" : "DIFFER");
    }
    {  // m+vbi+mur with lam3=0 == m+vbi
        ExperimentConfig with = reduction_base();
        with.method = Method::Mt;
        with.vbi = true;
        with.lr_peak = 0.03;
        with.lam2_peak = 0.05;
        with.mur_solver = MurSolver::Direct;
        with.radius = 0.4;
        with.lam3_peak = 0.0;
        ExperimentConfig without = with;
        without.mur_solver = MurSolver::Off;
        bool ok = csv_without_wall(with, 4) == csv_without_wall(without, 4);
        all = all && ok;
        detail += fmt("; mt+vbi+mur(lam3=0)==mt+vbi: %s", ok ? "identical" : "DIFFER");
    }
    {  // all-zero coefficients == supervised, across different method paths
        ExperimentConfig pi = reduction_base();
        pi.lam1_peak = 0.0;
        ExperimentConfig mut = reduction_base();
        mut.method = Method::Mut;
        mut.mur_solver = MurSolver::Direct;
        mut.radius = 0.4;
        mut.lam3_peak = 0.0;
        bool ok = csv_without_wall(pi, 5) == csv_without_wall(mut, 5);
        all = all && ok;
        detail += fmt("; all-zero==supervised: %s", ok ? "identical" : "DIFFER");
    }
    report(6, all, false, detail);
}

// ------------------------------------------------------------- criteria 7 + 8

struct SeedStats {
    std::vector<double> errors;
    std::vector<double> sensitivities;
};

SeedStats run_over_seeds(const ExperimentConfig& cfg) {
    SeedStats stats;
    for (std::uint64_t s : ten_seeds()) {
        RunResult run = run_single(cfg, s);
        stats.errors.push_back(run.final_error());
        stats.sensitivities.push_back(run.stream.back().mean_sensitivity);
    }
    return stats;
}

void criteria_7_and_8_ssl_benefit() {
    auto t0 = std::chrono::steady_clock::now();

    ExperimentConfig supervised;
    supervised.lam1_peak = 0.0;
    supervised.eval_every = 2000;
    SeedStats sup = run_over_seeds(supervised);
    double sup_mean = mean_std(sup.errors).first;

    // mut tuned over a 3-point radius sweep
    std::vector<double> sweep_radii = {0.25, 0.4, 0.6};
    std::vector<SeedStats> sweep_stats;
    double best_mean = 1e9;
    std::size_t best = 0;
    for (std::size_t i = 0; i < sweep_radii.size(); ++i) {
        ExperimentConfig mut = supervised;
        mut.method = Method::Mut;
        mut.mur_solver = MurSolver::Direct;
        mut.lam3_peak = 4.0;
        mut.radius = sweep_radii[i];
        sweep_stats.push_back(run_over_seeds(mut));
        double mean = mean_std(sweep_stats.back().errors).first;
        if (mean < best_mean) {
            best_mean = mean;
            best = i;
        }
    }

    // mean teacher with and without vd+mur
    ExperimentConfig mt;
    mt.method = Method::Mt;
    mt.eval_every = 2000;
    SeedStats mt_stats = run_over_seeds(mt);
    double mt_mean = mean_std(mt_stats.errors).first;

    ExperimentConfig full = mt;
    full.vbi = true;
    full.lr_peak = 0.03;
    full.mur_solver = MurSolver::Direct;
    full.radius = sweep_radii[best];
    SeedStats full_stats = run_over_seeds(full);
    double full_mean = mean_std(full_stats.errors).first;

    double secs = elapsed_s(t0);
    bool pass7 = (sup_mean - best_mean >= 5.0) && (full_mean <= mt_mean) && secs < 600.0;
    report(7, pass7, false,
           fmt("supervised %.2f%%, mut(r=%.2f) %.2f%% (gap %.2fpp); mt %.2f%% vs mt+vd+mur "
               "%.2f%%; %.0fs",
               sup_mean, sweep_radii[best], best_mean, sup_mean - best_mean, mt_mean, full_mean,
               secs));

    // criterion 8: paired sensitivity against the supervised baseline, with
    // the regularizer in its local-smoothing regime (small radius, strong
    // coefficient); this config also beats the baseline on error
    ExperimentConfig smooth = supervised;
    smooth.method = Method::Mut;
    smooth.mur_solver = MurSolver::Direct;
    smooth.radius = 0.2;
    smooth.lam3_peak = 12.0;
    SeedStats mur_smooth = run_over_seeds(smooth);
    int wins = 0;
    for (std::size_t i = 0; i < ten_seeds().size(); ++i)
        if (mur_smooth.sensitivities[i] < sup.sensitivities[i]) ++wins;
    report(8, wins >= 8, false,
           fmt("mur-trained (r=%.2f, lam3=%.0f) sensitivity below plain in %d/10 paired "
               "seeds (means %.3f vs %.3f)",
               smooth.radius, smooth.lam3_peak, wins, mean_std(mur_smooth.sensitivities).first,
               mean_std(sup.sensitivities).first));
}

// ---------------------------------------------------------------- criterion 9

void criterion_9_radius_shape() {
    // multiples of the data-scaled default radius, one error curve per seed
    std::vector<double> multiples = {0.1, 0.5, 1.0, 4.0};
    std::vector<std::vector<double>> per_seed(ten_seeds().size());
    for (double m : multiples) {
        ExperimentConfig mut;
        mut.method = Method::Mut;
        mut.mur_solver = MurSolver::Direct;
        mut.lam1_peak = 0.0;
        mut.eval_every = 2000;
        mut.radius = -1.0;
        mut.radius_scale = 0.4 * m;
        for (std::size_t i = 0; i < ten_seeds().size(); ++i)
            per_seed[i].push_back(run_single(mut, ten_seeds()[i]).final_error());
    }
    int interior = 0;
    for (const auto& curve : per_seed) {
        std::size_t argmin = 0;
        for (std::size_t i = 1; i < curve.size(); ++i)
            if (curve[i] < curve[argmin]) argmin = i;
        bool strictly_interior = (argmin == 1 || argmin == 2) &&
                                 curve[argmin] < curve.front() &&
                                 curve[argmin] < curve.back();
        if (strictly_interior) ++interior;
    }
    report(9, interior >= 7, true,
           fmt("interior error minimum across {0.1x,0.5x,1x,4x} default radius in %d/10 seeds",
               interior));
}

// --------------------------------------------------------------- criterion 10

void criterion_10_sparsity_response() {
    double pruned[2] = {0.0, 0.0};
    int idx = 0;
    for (double lam2 : {0.005, 0.5}) {
        ExperimentConfig cfg;
        cfg.method = Method::Mt;
        cfg.vbi = true;
        cfg.lr_peak = 0.03;
        cfg.lam2_peak = lam2;
        cfg.total_steps = 100;  // early in the collapse, where the pressure
        cfg.ramp_up = 10;       // difference is visible
        cfg.ramp_down = 20;
        cfg.eval_every = 100;
        for (std::uint64_t s : {1, 2, 3, 4, 5})
            pruned[idx] += run_single(cfg, s).stream.back().fraction_pruned / 5.0;
        ++idx;
    }
    report(10, pruned[1] > pruned[0], false,
           fmt("mean pruned fraction: lam2=0.5 -> %.3f vs lam2=0.005 -> %.3f", pruned[1],
               pruned[0]));
}

// --------------------------------------------------------------- criterion 11

void criterion_11_rr_comparison() {
    ExperimentConfig cfg;
    cfg.method = Method::Mut;
    cfg.lam1_peak = 0.0;
    cfg.eval_every = 2000;
    cfg.seeds = ten_seeds();
    auto rows = compare_rr(cfg, {0.4});  // the tuned radius from criterion 7
    double mur = rows[0].mean_error, rr = rows[1].mean_error;
    report(11, mur <= rr, true,
           fmt("at r=0.4 over 10 paired seeds: mur %.2f%% vs rr %.2f%%", mur, rr));
}

// --------------------------------------------------------------- criterion 12

void criterion_12_determinism() {
    ExperimentConfig cfg;
    cfg.method = Method::Mt;
    cfg.vbi = true;
    cfg.lr_peak = 0.03;
    cfg.mur_solver = MurSolver::Direct;
    cfg.radius = 0.4;
    cfg.n_train = 150;
    cfg.total_steps = 200;
    cfg.ramp_up = 30;
    cfg.ramp_down = 50;
    cfg.eval_every = 40;
    bool full_ok = csv_without_wall(cfg, 17) == csv_without_wall(cfg, 17);

    ExperimentConfig plain = cfg;
    plain.method = Method::Pi;
    plain.vbi = false;
    plain.mur_solver = MurSolver::Off;
    bool plain_ok = csv_without_wall(plain, 18) == csv_without_wall(plain, 18);

    report(12, full_ok && plain_ok, false,
           fmt("repeated invocations bit-identical: full objective %s, deterministic %s",
               full_ok ? "yes" : "NO", plain_ok ? "yes" : "NO"));
}

}  // namespace

int main() {
    auto t0 = std::chrono::steady_clock::now();
    criterion_1_gradient_integrity();
    criterion_2_direct_point_oracle();
    criterion_3_solver_quality();
    criterion_4_local_reparam();
    criterion_5_kl_correctness();
    criterion_6_reduction_lattice();
    criteria_7_and_8_ssl_benefit();
    criterion_9_radius_shape();
    criterion_10_sparsity_response();
    criterion_11_rr_comparison();
    criterion_12_determinism();
    std::printf("acceptance: %s (%d hard failure%s, %.0fs total)\n",
                failures == 0 ? "ALL HARD CRITERIA PASSED" : "FAILED", failures,
                failures == 1 ? "" : "s", elapsed_s(t0));
    return failures == 0 ? 0 : 1;
}
