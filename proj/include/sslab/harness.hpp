#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sslab/data.hpp"
#include "sslab/model.hpp"
#include "sslab/mur.hpp"
#include "sslab/objectives.hpp"

namespace sslab {

/// Thrown before any training starts when a configuration is inconsistent.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    // dataset
    std::string dataset = "two_moons";  // two_moons | rings
    std::size_t n_train = 300;          // test set has the same size
    double data_noise = 0.1;
    std::size_t n_labeled = 6;
    bool zca = false;

    // model
    std::vector<std::size_t> hidden = {64, 64};
    double leaky_slope = 0.1;
    double input_noise_sigma = 0.15;
    double dropout_rate = 0.2;

    // method
    Method method = Method::Pi;
    bool vbi = false;
    MurSolver mur_solver = MurSolver::Off;
    double radius = -1.0;       // < 0: auto from data (see radius_scale)
    double radius_scale = 0.4;  // auto radius = scale * median pairwise distance
    double mur_lr = 0.3;
    int mur_steps = 5;

    // schedules (peaks; shared ramp windows)
    double lam1_peak = 10.0;
    double lam2_peak = 0.05;
    double lam3_peak = 4.0;
    double lr_peak = 0.1;
    long ramp_up = 400;
    long ramp_down = 800;
    long total_steps = 4000;

    // optimization
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double grad_clip = 1.0;  // per-component; <= 0 disables
    double ema_momentum = 0.99;

    // batches / bookkeeping
    std::size_t batch_labeled = 5;
    std::size_t batch_unlabeled = 15;
    long eval_every = 100;
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir;

    void validate() const;
    ModelSpec model_spec(std::size_t input_dim, std::size_t n_classes) const;
    bool uses_teacher() const { return method == Method::Mt || method == Method::Ict; }
    bool mur_requested() const { return mur_solver != MurSolver::Off && lam3_peak > 0.0; }
};

ExperimentConfig load_config(const std::string& path);
std::string config_to_json_string(const ExperimentConfig& cfg);
ExperimentConfig config_from_json_string(const std::string& text);

/// FNV-1a over the canonical (sorted-key) JSON form; stable across field order.
std::string config_hash(const ExperimentConfig& cfg);

struct MetricsRecord {
    long step = 0;
    LossBreakdown loss;
    double test_error_pct = 0.0;
    double mean_sensitivity = 0.0;
    double fraction_pruned = 0.0;
    double mean_g0_norm = 0.0;
    double wall_ms = 0.0;
};

/// metrics.csv column order; wall_ms last and excluded from determinism
/// comparisons since it measures the host, not the run.
std::string metrics_header();
std::string metrics_row(const MetricsRecord& r);

struct RunResult {
    std::uint64_t seed = 0;
    std::vector<MetricsRecord> stream;
    ParamSet final_params;          // student
    std::optional<ParamSet> final_teacher;
    ModelSpec spec;
    double resolved_radius = 0.0;
    double final_error() const { return stream.back().test_error_pct; }
};

/// The dataset a run with this (config, seed) trains on, preprocessing
/// included.
SslDataset dataset_for_run(const ExperimentConfig& cfg, std::uint64_t seed);

/// Trains one seed end to end. When `metrics_out` is non-null every eval row
/// is appended to it as CSV.
RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed,
                     std::ostream* metrics_out = nullptr);

struct ExperimentResult {
    std::vector<RunResult> runs;
    double mean_error = 0.0;
    double std_error = 0.0;  // sample std, 0 for a single seed
};

/// Runs every configured seed; writes per-seed metrics.csv, checkpoints and a
/// summary when cfg.out_dir is set.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct RadiusGridRow {
    double radius = 0.0;
    std::string method;
    double mean_error = 0.0;
    double std_error = 0.0;
};

/// Paired MUR (direct) vs random-regularization runs over a radius grid.
std::vector<RadiusGridRow> compare_rr(const ExperimentConfig& cfg,
                                      const std::vector<double>& radii);

/// One method over a radius grid.
std::vector<RadiusGridRow> sweep_radius(const ExperimentConfig& cfg,
                                        const std::vector<double>& radii);

void save_radius_grid_csv(const std::string& path, const std::vector<RadiusGridRow>& rows);

struct SensitivitySweep {
    std::vector<double> values;  // per test example
    std::vector<std::size_t> histogram;
    double bin_width = 0.0;
    double mean = 0.0;
};

SensitivitySweep sensitivity_sweep(const ModelSpec& spec, const ParamSet& params,
                                   const Batch& test, double bin_width);
void save_sensitivity_csv(const std::string& path, const SensitivitySweep& sweep);

/// Per-example virtual point dump for 2-D plotting.
void dump_virtual_points(const std::string& path, const ModelSpec& spec, const ParamSet& params,
                         const Batch& batch, const MurConfig& cfg, std::uint64_t seed);

/// Structured summary (config hash, per-seed finals, mean +/- sample std).
void emit_summary(const std::string& path, const ExperimentConfig& cfg,
                  const ExperimentResult& result);

/// Mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& values);

/// Classification error in percent with the given evaluation weights.
double test_error_pct(const ModelSpec& spec, const ParamSet& params, const Batch& test);

}  // namespace sslab
