#include "sslab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sslab/serialize.hpp"
#include "sslab/util.hpp"
#include "sslab/vardrop.hpp"

namespace sslab {

namespace {

// tags for per-run random streams
constexpr std::uint64_t kDataTag = 0x64617461ULL;
constexpr std::uint64_t kInitTag = 0x696e6974ULL;
constexpr std::uint64_t kBatchTag = 0x6261746368ULL;
constexpr std::uint64_t kStepTag = 0x73746570ULL;
constexpr std::uint64_t kSolverTag = 0x736f6c7665ULL;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (dataset != "two_moons" && dataset != "rings")
        throw ConfigError("config: unknown dataset '" + dataset + "'");
    if (n_labeled < 2 || n_labeled % 2 != 0 || n_labeled > n_train)
        throw ConfigError("config: n_labeled must be even, >= 2 and <= n_train");
    if (hidden.empty()) throw ConfigError("config: need at least one hidden layer");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("config: dropout_rate must lie in [0,1)");
    if (uses_teacher() && (ema_momentum < 0.0 || ema_momentum > 1.0))
        throw ConfigError("config: mean teacher methods need ema_momentum in [0,1]");
    if (method == Method::Mut && mur_solver == MurSolver::Off)
        throw ConfigError("config: mut needs a virtual point solver");
    if (mur_solver == MurSolver::Random && radius < 0.0 && radius_scale <= 0.0)
        throw ConfigError("config: the random regularization baseline needs a radius");
    if (lam1_peak < 0.0 || lam2_peak < 0.0 || lam3_peak < 0.0 || lr_peak <= 0.0)
        throw ConfigError("config: coefficient peaks must be >= 0 and lr_peak > 0");
    if (ramp_up < 0 || ramp_down < 0 || ramp_up + ramp_down > total_steps)
        throw ConfigError("config: ramp windows exceed total_steps");
    if (batch_labeled == 0) throw ConfigError("config: every batch needs labeled examples");
    if (eval_every < 1 || eval_every > total_steps)
        throw ConfigError("config: eval_every out of range");
    if (seeds.empty()) throw ConfigError("config: need at least one seed");
}

ModelSpec ExperimentConfig::model_spec(std::size_t input_dim, std::size_t n_classes) const {
    ModelSpec spec;
    spec.widths.push_back(input_dim);
    for (std::size_t h : hidden) spec.widths.push_back(h);
    spec.widths.push_back(n_classes);
    spec.leaky_slope = leaky_slope;
    spec.input_noise_sigma = input_noise_sigma;
    spec.dropout_rate = dropout_rate;
    spec.weight_mode = vbi ? WeightMode::Variational : WeightMode::Deterministic;
    spec.validate();
    return spec;
}

// ---- config serialization ----------------------------------------------------

namespace {

nlohmann::json config_to_json(const ExperimentConfig& c) {
    return nlohmann::json{
        {"dataset", c.dataset},
        {"n_train", c.n_train},
        {"data_noise", c.data_noise},
        {"n_labeled", c.n_labeled},
        {"zca", c.zca},
        {"hidden", c.hidden},
        {"leaky_slope", c.leaky_slope},
        {"input_noise_sigma", c.input_noise_sigma},
        {"dropout_rate", c.dropout_rate},
        {"method", method_name(c.method)},
        {"vbi", c.vbi},
        {"mur_solver", mur_solver_name(c.mur_solver)},
        {"radius", c.radius},
        {"radius_scale", c.radius_scale},
        {"mur_lr", c.mur_lr},
        {"mur_steps", c.mur_steps},
        {"lam1_peak", c.lam1_peak},
        {"lam2_peak", c.lam2_peak},
        {"lam3_peak", c.lam3_peak},
        {"lr_peak", c.lr_peak},
        {"ramp_up", c.ramp_up},
        {"ramp_down", c.ramp_down},
        {"total_steps", c.total_steps},
        {"momentum", c.momentum},
        {"weight_decay", c.weight_decay},
        {"grad_clip", c.grad_clip},
        {"ema_momentum", c.ema_momentum},
        {"batch_labeled", c.batch_labeled},
        {"batch_unlabeled", c.batch_unlabeled},
        {"eval_every", c.eval_every},
        {"seeds", c.seeds},
        {"out_dir", c.out_dir},
    };
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.dataset = j.value("dataset", c.dataset);
    c.n_train = j.value("n_train", c.n_train);
    c.data_noise = j.value("data_noise", c.data_noise);
    c.n_labeled = j.value("n_labeled", c.n_labeled);
    c.zca = j.value("zca", c.zca);
    c.hidden = j.value("hidden", c.hidden);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.input_noise_sigma = j.value("input_noise_sigma", c.input_noise_sigma);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    if (j.contains("method")) c.method = method_from_name(j.at("method").get<std::string>());
    c.vbi = j.value("vbi", c.vbi);
    if (j.contains("mur_solver"))
        c.mur_solver = mur_solver_from_name(j.at("mur_solver").get<std::string>());
    c.radius = j.value("radius", c.radius);
    c.radius_scale = j.value("radius_scale", c.radius_scale);
    c.mur_lr = j.value("mur_lr", c.mur_lr);
    c.mur_steps = j.value("mur_steps", c.mur_steps);
    c.lam1_peak = j.value("lam1_peak", c.lam1_peak);
    c.lam2_peak = j.value("lam2_peak", c.lam2_peak);
    c.lam3_peak = j.value("lam3_peak", c.lam3_peak);
    c.lr_peak = j.value("lr_peak", c.lr_peak);
    c.ramp_up = j.value("ramp_up", c.ramp_up);
    c.ramp_down = j.value("ramp_down", c.ramp_down);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
    c.batch_labeled = j.value("batch_labeled", c.batch_labeled);
    c.batch_unlabeled = j.value("batch_unlabeled", c.batch_unlabeled);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.seeds = j.value("seeds", c.seeds);
    c.out_dir = j.value("out_dir", c.out_dir);
    return c;
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return config_from_json(j);
}

std::string config_to_json_string(const ExperimentConfig& cfg) {
    return config_to_json(cfg).dump(2);
}

ExperimentConfig config_from_json_string(const std::string& text) {
    return config_from_json(nlohmann::json::parse(text));
}

std::string config_hash(const ExperimentConfig& cfg) {
    std::string canon = config_to_json(cfg).dump();  // object keys are sorted
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- metrics -------------------------------------------------------------------

std::string metrics_header() {
    return "step,xent,consistency,kl,mur,total,lam1,lam2,lam3,"
           "test_error_pct,mean_sensitivity,fraction_pruned,mean_g0_norm,wall_ms";
}

std::string metrics_row(const MetricsRecord& r) {
    std::ostringstream os;
    os << r.step << ',' << fmt17(r.loss.xent) << ',' << fmt17(r.loss.consistency) << ','
       << fmt17(r.loss.kl) << ',' << fmt17(r.loss.mur) << ',' << fmt17(r.loss.total) << ','
       << fmt17(r.loss.lam1) << ',' << fmt17(r.loss.lam2) << ',' << fmt17(r.loss.lam3) << ','
       << fmt17(r.test_error_pct) << ',' << fmt17(r.mean_sensitivity) << ','
       << fmt17(r.fraction_pruned) << ',' << fmt17(r.mean_g0_norm) << ',' << fmt17(r.wall_ms);
    return os.str();
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
    if (values.empty()) throw UsageError("mean_std: empty input");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (values.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

double test_error_pct(const ModelSpec& spec, const ParamSet& params, const Batch& test) {
    PredictiveOutput out = forward(spec, params, test.inputs, false, 0);
    std::size_t k = spec.n_classes();
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < test.n(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (out.probs.at(i, c) > out.probs.at(i, best)) best = c;
        if (static_cast<int>(best) != test.labels[i]) ++wrong;
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(test.n());
}

// ---- training -------------------------------------------------------------------

namespace {

SslDataset build_dataset_impl(const ExperimentConfig& cfg, std::uint64_t data_seed) {
    SslDataset data = cfg.dataset == "two_moons"
                          ? make_two_moons(cfg.n_train, cfg.data_noise, cfg.n_labeled, data_seed)
                          : make_rings(cfg.n_train, cfg.data_noise, cfg.n_labeled, data_seed);
    if (cfg.zca) {
        Tensor train({data.labeled.n() + data.unlabeled.n(), data.dim});
        std::size_t row = 0;
        for (const Batch* b : {&data.labeled, &data.unlabeled})
            for (std::size_t i = 0; i < b->n(); ++i, ++row)
                for (std::size_t j = 0; j < data.dim; ++j)
                    train.at(row, j) = b->inputs.at(i, j);
        ZcaTransform zca = fit_zca(train);
        data.labeled.inputs = apply_zca(zca, data.labeled.inputs);
        data.unlabeled.inputs = apply_zca(zca, data.unlabeled.inputs);
        data.test.inputs = apply_zca(zca, data.test.inputs);
    }
    return data;
}

double mean_g0_norm(const ModelSpec& spec, const ParamSet& params, const Tensor& inputs) {
    Tensor g0 = entropy_gradient_batch(spec, params, inputs);
    double acc = 0.0;
    for (std::size_t i = 0; i < g0.shape[0]; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < g0.shape[1]; ++j) s += g0.at(i, j) * g0.at(i, j);
        acc += std::sqrt(s);
    }
    return acc / static_cast<double>(g0.shape[0]);
}

}  // namespace

SslDataset dataset_for_run(const ExperimentConfig& cfg, std::uint64_t seed) {
    return build_dataset_impl(cfg, derive_seed(seed, kDataTag));
}

RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed, std::ostream* metrics_out) {
    cfg.validate();
    auto t_start = std::chrono::steady_clock::now();
    auto wall_ms = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                         t_start)
            .count();
    };

    SslDataset data = dataset_for_run(cfg, seed);
    ModelSpec spec = cfg.model_spec(data.dim, data.n_classes);

    double radius = cfg.radius;
    if (cfg.mur_solver != MurSolver::Off && radius < 0.0)
        radius = cfg.radius_scale * median_pairwise_distance(data.unlabeled.inputs);
    MurConfig mur_cfg{radius, cfg.mur_solver, cfg.mur_lr, cfg.mur_steps};

    ParamSet params = init_params(spec, derive_seed(seed, kInitTag));
    std::optional<TeacherState> teacher;
    if (cfg.uses_teacher()) teacher = make_teacher(params, cfg.ema_momentum);

    BatchSampler sampler(data, cfg.batch_labeled, cfg.batch_unlabeled,
                         derive_seed(seed, kBatchTag));
    NesterovSgd opt(cfg.momentum, cfg.weight_decay, cfg.grad_clip);

    bool consistency_active = cfg.method != Method::Mut && cfg.lam1_peak > 0.0;
    bool kl_active = cfg.vbi && cfg.lam2_peak > 0.0;
    bool mur_active = cfg.mur_requested();
    ScheduleSpec lam1{cfg.lam1_peak, cfg.ramp_up, cfg.ramp_down, cfg.total_steps};
    ScheduleSpec lam2{cfg.lam2_peak, cfg.ramp_up, cfg.ramp_down, cfg.total_steps};
    ScheduleSpec lam3{cfg.lam3_peak, cfg.ramp_up, cfg.ramp_down, cfg.total_steps};
    ScheduleSpec lr{cfg.lr_peak, cfg.ramp_up, cfg.ramp_down, cfg.total_steps};

    RunResult result;
    result.seed = seed;
    result.spec = spec;
    result.resolved_radius = radius;

    const ParamSet& eval_params_ref = teacher ? teacher->params : params;
    auto record = [&](long step, const LossBreakdown& loss) {
        MetricsRecord r;
        r.step = step;
        r.loss = loss;
        r.test_error_pct = test_error_pct(spec, eval_params_ref, data.test);
        auto sens = sensitivity_batch(spec, eval_params_ref, data.test.inputs);
        r.mean_sensitivity = mean_std(sens).first;
        r.fraction_pruned = spec.variational() ? sparsity_report(params).fraction_pruned : 0.0;
        r.mean_g0_norm = mean_g0_norm(spec, eval_params_ref, data.test.inputs);
        r.wall_ms = wall_ms();
        result.stream.push_back(r);
        if (metrics_out) *metrics_out << metrics_row(r) << '\n';
    };

    if (metrics_out) *metrics_out << metrics_header() << '\n';
    record(0, LossBreakdown{});

    for (long t = 1; t <= cfg.total_steps; ++t) {
        Batch batch = sampler.next();

        LossInputs in;
        in.method = cfg.method;
        in.spec = &spec;
        in.params = &params;
        in.teacher = teacher ? &*teacher : nullptr;
        in.batch = &batch;
        in.vbi_on = cfg.vbi;
        in.consistency_active = consistency_active;
        in.kl_active = kl_active;
        in.mur_active = mur_active;
        in.lam1 = consistency_active ? ramp_value(lam1, t) : 0.0;
        in.lam2 = kl_active ? ramp_value(lam2, t) : 0.0;
        in.lam3 = mur_active ? ramp_value(lam3, t) : 0.0;
        in.seed = derive_seed(seed, kStepTag, static_cast<std::uint64_t>(t));

        BatchVirtualPoints vp;
        if (mur_active) {
            std::mt19937_64 solver_rng(derive_seed(seed, kSolverTag, static_cast<std::uint64_t>(t)));
            vp = find_virtual_points(spec, params, batch.inputs, mur_cfg, solver_rng);
            in.x_star = &vp.x_star;
        }

        StepLoss sl = build_step_loss(in);
        sl.graph->backward(sl.total);
        opt.step(params, *sl.graph, sl.vars, ramp_value(lr, t));
        if (teacher) ema_update(*teacher, params);

        if (t % cfg.eval_every == 0 || t == cfg.total_steps) record(t, sl.breakdown);
    }

    result.final_params = params;
    if (teacher) result.final_teacher = teacher->params;
    return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    ExperimentResult result;
    std::vector<double> finals;
    for (std::uint64_t seed : cfg.seeds) {
        std::ofstream metrics_file;
        std::ostream* out = nullptr;
        fs::path seed_dir;
        if (!cfg.out_dir.empty()) {
            seed_dir = fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
            fs::create_directories(seed_dir);
            metrics_file.open(seed_dir / "metrics.csv");
            out = &metrics_file;
        }
        RunResult run = run_single(cfg, seed, out);
        if (!cfg.out_dir.empty()) {
            Checkpoint ckpt{run.spec, run.final_teacher ? *run.final_teacher : run.final_params,
                            seed, cfg.total_steps};
            save_checkpoint((seed_dir / "model.ckpt").string(), ckpt);
        }
        finals.push_back(run.final_error());
        result.runs.push_back(std::move(run));
    }
    auto [mean, sd] = mean_std(finals);
    result.mean_error = mean;
    result.std_error = sd;
    if (!cfg.out_dir.empty())
        emit_summary((std::filesystem::path(cfg.out_dir) / "summary.json").string(), cfg, result);
    return result;
}

std::vector<RadiusGridRow> sweep_radius(const ExperimentConfig& cfg,
                                        const std::vector<double>& radii) {
    std::vector<RadiusGridRow> rows;
    for (double r : radii) {
        ExperimentConfig c = cfg;
        c.radius = r;
        c.out_dir.clear();
        ExperimentResult res = run_experiment(c);
        rows.push_back({r, mur_solver_name(c.mur_solver), res.mean_error, res.std_error});
    }
    return rows;
}

std::vector<RadiusGridRow> compare_rr(const ExperimentConfig& cfg,
                                      const std::vector<double>& radii) {
    std::vector<RadiusGridRow> rows;
    for (double r : radii)
        for (MurSolver solver : {MurSolver::Direct, MurSolver::Random}) {
            ExperimentConfig c = cfg;
            c.mur_solver = solver;
            c.radius = r;
            c.out_dir.clear();
            ExperimentResult res = run_experiment(c);
            rows.push_back({r, solver == MurSolver::Direct ? "mur" : "rr", res.mean_error,
                            res.std_error});
        }
    return rows;
}

void save_radius_grid_csv(const std::string& path, const std::vector<RadiusGridRow>& rows) {
    std::ofstream os(path);
    if (!os) throw UsageError("cannot open " + path + " for writing");
    os << "radius,method,mean_error,std_error\n";
    for (const auto& r : rows)
        os << fmt17(r.radius) << ',' << r.method << ',' << fmt17(r.mean_error) << ','
           << fmt17(r.std_error) << '\n';
}

SensitivitySweep sensitivity_sweep(const ModelSpec& spec, const ParamSet& params,
                                   const Batch& test, double bin_width) {
    if (bin_width <= 0.0) throw UsageError("sensitivity_sweep: bin width must be positive");
    SensitivitySweep sweep;
    sweep.bin_width = bin_width;
    sweep.values = sensitivity_batch(spec, params, test.inputs);
    double max_v = 0.0;
    for (double v : sweep.values) max_v = std::max(max_v, v);
    sweep.histogram.assign(static_cast<std::size_t>(max_v / bin_width) + 1, 0);
    for (double v : sweep.values)
        ++sweep.histogram[static_cast<std::size_t>(v / bin_width)];
    sweep.mean = mean_std(sweep.values).first;
    return sweep;
}

void save_sensitivity_csv(const std::string& path, const SensitivitySweep& sweep) {
    std::ofstream os(path);
    if (!os) throw UsageError("cannot open " + path + " for writing");
    os << "kind,key,value\n";
    for (std::size_t i = 0; i < sweep.values.size(); ++i)
        os << "example," << i << ',' << fmt17(sweep.values[i]) << '\n';
    for (std::size_t b = 0; b < sweep.histogram.size(); ++b)
        os << "bin," << fmt17(static_cast<double>(b) * sweep.bin_width) << ','
           << sweep.histogram[b] << '\n';
}

void dump_virtual_points(const std::string& path, const ModelSpec& spec, const ParamSet& params,
                         const Batch& batch, const MurConfig& cfg, std::uint64_t seed) {
    std::ofstream os(path);
    if (!os) throw UsageError("cannot open " + path + " for writing");
    std::size_t d = batch.inputs.shape[1];
    os << "example_id";
    for (std::size_t j = 0; j < d; ++j) os << ",x0_" << j;
    for (std::size_t j = 0; j < d; ++j) os << ",xstar_" << j;
    os << ",entropy_x0,entropy_xstar\n";

    std::mt19937_64 rng(seed);
    BatchVirtualPoints vp = find_virtual_points(spec, params, batch.inputs, cfg, rng);
    for (std::size_t i = 0; i < batch.n(); ++i) {
        Tensor x0({d}), xs({d});
        for (std::size_t j = 0; j < d; ++j) {
            x0.data[j] = batch.inputs.at(i, j);
            xs.data[j] = vp.x_star.at(i, j);
        }
        os << i;
        for (std::size_t j = 0; j < d; ++j) os << ',' << fmt17(x0.data[j]);
        for (std::size_t j = 0; j < d; ++j) os << ',' << fmt17(xs.data[j]);
        os << ',' << fmt17(entropy_at(spec, params, x0)) << ','
           << fmt17(entropy_at(spec, params, xs)) << '\n';
    }
}

void emit_summary(const std::string& path, const ExperimentConfig& cfg,
                  const ExperimentResult& result) {
    if (result.runs.empty()) throw UsageError("summary: no runs to summarize");
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& run : result.runs) {
        const MetricsRecord& last = run.stream.back();
        per_seed.push_back({
            {"seed", run.seed},
            {"final_error_pct", last.test_error_pct},
            {"mean_sensitivity", last.mean_sensitivity},
            {"fraction_pruned", last.fraction_pruned},
            {"mean_g0_norm", last.mean_g0_norm},
            {"resolved_radius", run.resolved_radius},
        });
    }
    nlohmann::json j{
        {"config_hash", config_hash(cfg)},
        {"config", nlohmann::json::parse(config_to_json_string(cfg))},
        {"per_seed", per_seed},
        {"mean_error_pct", result.mean_error},
        {"std_error_pct", result.std_error},
    };
    std::ofstream os(path);
    if (!os) throw UsageError("cannot open " + path + " for writing");
    os << j.dump(2) << '\n';
}

}  // namespace sslab
