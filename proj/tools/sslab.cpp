// sslab command line: training runs, radius sweeps, the random-regularization
// comparison, sensitivity sweeps and virtual point dumps.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "sslab/harness.hpp"

namespace {

using namespace sslab;

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> method;
    std::optional<std::string> vbi;
    std::optional<std::string> mur_solver;
    std::optional<double> radius;
    std::optional<std::string> out;
    std::optional<long> steps;
    bool print_config = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--seed", args.seed, "train a single seed instead of the config list");
    cmd->add_option("--method", args.method, "pi | mt | ict | mut")
        ->check(CLI::IsMember({"pi", "mt", "ict", "mut"}));
    cmd->add_option("--vbi", args.vbi, "on | off")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--mur-solver", args.mur_solver, "direct | pga | laga | random | off")
        ->check(CLI::IsMember({"direct", "pga", "laga", "random", "off"}));
    cmd->add_option("--radius", args.radius, "virtual point radius (negative: scale from data)");
    cmd->add_option("--steps", args.steps, "total training steps");
    cmd->add_option("--out", args.out, "output directory");
    cmd->add_flag("--print-config", args.print_config, "echo the fully resolved config");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
    ExperimentConfig cfg;
    if (!args.config_path.empty()) cfg = load_config(args.config_path);
    if (args.seed) cfg.seeds = {*args.seed};
    if (args.method) cfg.method = method_from_name(*args.method);
    if (args.vbi) cfg.vbi = *args.vbi == "on";
    if (args.mur_solver) cfg.mur_solver = mur_solver_from_name(*args.mur_solver);
    if (args.radius) cfg.radius = *args.radius;
    if (args.steps) cfg.total_steps = *args.steps;
    if (args.out) cfg.out_dir = *args.out;
    cfg.validate();
    if (args.print_config) std::cout << config_to_json_string(cfg) << "\n";
    return cfg;
}

std::vector<double> resolve_radii(const ExperimentConfig& cfg, const std::string& radii_arg) {
    std::vector<double> radii;
    if (!radii_arg.empty()) {
        std::stringstream ss(radii_arg);
        std::string tok;
        while (std::getline(ss, tok, ',')) radii.push_back(std::stod(tok));
        return radii;
    }
    // default grid: multiples of the data-scaled radius of the first seed
    ExperimentConfig probe = cfg;
    probe.radius = -1.0;
    SslDataset data = probe.dataset == "two_moons"
                          ? make_two_moons(probe.n_train, probe.data_noise, probe.n_labeled,
                                           probe.seeds.front())
                          : make_rings(probe.n_train, probe.data_noise, probe.n_labeled,
                                       probe.seeds.front());
    double base = probe.radius_scale * median_pairwise_distance(data.unlabeled.inputs);
    for (double m : {0.1, 0.5, 1.0, 4.0}) radii.push_back(m * base);
    return radii;
}

int run_train(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    ExperimentResult result = run_experiment(cfg);
    std::cout << "mean_error_pct=" << result.mean_error << " std=" << result.std_error
              << " seeds=" << result.runs.size() << "\n";
    return 0;
}

int run_sweep(const CommonArgs& args, const std::string& radii_arg, bool paired_rr) {
    ExperimentConfig cfg = resolve_config(args);
    if (cfg.mur_solver == MurSolver::Off) cfg.mur_solver = MurSolver::Direct;
    std::vector<double> radii = resolve_radii(cfg, radii_arg);
    auto rows = paired_rr ? compare_rr(cfg, radii) : sweep_radius(cfg, radii);
    std::string out = cfg.out_dir.empty() ? std::string("radius_grid.csv")
                                          : cfg.out_dir + "/radius_grid.csv";
    if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);
    save_radius_grid_csv(out, rows);
    for (const auto& r : rows)
        std::cout << r.method << " r=" << r.radius << " error=" << r.mean_error << "+/-"
                  << r.std_error << "\n";
    std::cout << "wrote " << out << "\n";
    return 0;
}

int run_sensitivity(const std::string& ckpt_path, const std::string& data_path,
                    const std::string& out, double bin_width) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    SslDataset data = load_dataset_csv(data_path);
    SensitivitySweep sweep = sensitivity_sweep(ckpt.spec, ckpt.params, data.test, bin_width);
    save_sensitivity_csv(out, sweep);
    std::cout << "mean_sensitivity=" << sweep.mean << " examples=" << sweep.values.size()
              << " wrote " << out << "\n";
    return 0;
}

int run_dump_virtual(const std::string& ckpt_path, const std::string& data_path,
                     const std::string& solver, double radius, double lr, int steps,
                     std::uint64_t seed, const std::string& out) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    SslDataset data = load_dataset_csv(data_path);
    MurConfig cfg{radius, mur_solver_from_name(solver), lr, steps};
    Batch all = data.unlabeled.n() > 0 ? data.unlabeled : data.test;
    dump_virtual_points(out, ckpt.spec, ckpt.params, all, cfg, seed);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int run_gen_data(const std::string& dataset, std::size_t n, double noise, std::size_t n_labeled,
                 std::uint64_t seed, const std::string& out) {
    SslDataset data = dataset == "two_moons" ? make_two_moons(n, noise, n_labeled, seed)
                                             : make_rings(n, noise, n_labeled, seed);
    save_dataset_csv(out, data);
    std::cout << "wrote " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-supervised training lab"};
    app.require_subcommand(1);

    CommonArgs train_args;
    CLI::App* train = app.add_subcommand("train", "run a training experiment");
    add_common(train, train_args);

    CommonArgs sweep_args;
    std::string sweep_radii;
    CLI::App* sweep = app.add_subcommand("sweep-radius", "error across a radius grid");
    add_common(sweep, sweep_args);
    sweep->add_option("--radii", sweep_radii, "comma separated radii (default: data-scaled grid)");

    CommonArgs rr_args;
    std::string rr_radii;
    CLI::App* rr = app.add_subcommand("compare-rr",
                                      "paired MUR vs random-regularization grid");
    add_common(rr, rr_args);
    rr->add_option("--radii", rr_radii, "comma separated radii (default: data-scaled grid)");

    std::string sens_ckpt, sens_data, sens_out = "sensitivity.csv";
    double sens_bin = 0.05;
    CLI::App* sens = app.add_subcommand("sensitivity", "per-example Jacobian norms");
    sens->add_option("--checkpoint", sens_ckpt, "checkpoint path")->required();
    sens->add_option("--data", sens_data, "dataset csv")->required();
    sens->add_option("--out", sens_out, "output csv");
    sens->add_option("--bin-width", sens_bin, "histogram bin width");

    std::string vp_ckpt, vp_data, vp_solver = "direct", vp_out = "virtual_points.csv";
    double vp_radius = 0.5, vp_lr = 0.3;
    int vp_steps = 5;
    std::uint64_t vp_seed = 1;
    CLI::App* vp = app.add_subcommand("dump-virtual-points", "emit x0/x* pairs for plotting");
    vp->add_option("--checkpoint", vp_ckpt)->required();
    vp->add_option("--data", vp_data)->required();
    vp->add_option("--solver", vp_solver)->check(CLI::IsMember({"direct", "pga", "laga", "random"}));
    vp->add_option("--radius", vp_radius);
    vp->add_option("--lr", vp_lr);
    vp->add_option("--steps", vp_steps);
    vp->add_option("--seed", vp_seed);
    vp->add_option("--out", vp_out);

    std::string gen_dataset = "two_moons", gen_out = "dataset.csv";
    std::size_t gen_n = 300, gen_labeled = 6;
    double gen_noise = 0.1;
    std::uint64_t gen_seed = 1;
    CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset csv");
    gen->add_option("--dataset", gen_dataset)->check(CLI::IsMember({"two_moons", "rings"}));
    gen->add_option("--n", gen_n);
    gen->add_option("--noise", gen_noise);
    gen->add_option("--n-labeled", gen_labeled);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out", gen_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return run_train(train_args);
        if (sweep->parsed()) return run_sweep(sweep_args, sweep_radii, false);
        if (rr->parsed()) return run_sweep(rr_args, rr_radii, true);
        if (sens->parsed()) return run_sensitivity(sens_ckpt, sens_data, sens_out, sens_bin);
        if (vp->parsed())
            return run_dump_virtual(vp_ckpt, vp_data, vp_solver, vp_radius, vp_lr, vp_steps,
                                    vp_seed, vp_out);
        if (gen->parsed())
            return run_gen_data(gen_dataset, gen_n, gen_noise, gen_labeled, gen_seed, gen_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
