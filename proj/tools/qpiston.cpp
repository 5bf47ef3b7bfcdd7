// Command-line front end: single runs, figure scenarios, pressure sweeps,
// Jarzynski analysis, and the convergence report. Everything is
// deterministic; QPISTON_THREADS bounds the worker pool for sweeps and
// per-eigenstate replays.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qpiston/config.hpp"
#include "qpiston/dynamics.hpp"
#include "qpiston/io.hpp"
#include "qpiston/scenarios.hpp"
#include "qpiston/thermo.hpp"

namespace {

struct CommonOptions {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<int> truncation;
    std::optional<double> time_step;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
    cmd->add_option("--config", opt.config_path, "JSON run configuration");
    cmd->add_option("--out", opt.out_dir, "output directory");
    cmd->add_option("--k", opt.truncation, "override basis truncation");
    cmd->add_option("--dt", opt.time_step, "override integrator time step");
}

qpiston::RunConfig load(const CommonOptions& opt) {
    qpiston::RunConfig config;
    if (!opt.config_path.empty())
        config = qpiston::load_config(opt.config_path);
    if (opt.truncation)
        config.params.truncation = *opt.truncation;
    if (opt.time_step)
        config.params.time_step = *opt.time_step;
    config.params.validate();
    return config;
}

void warn_truncated_partition(const qpiston::RunConfig& config) {
    const double tail = qpiston::partition_truncation_tail(
        config.params.beta, 1.0, config.params.truncation, config.params.particle_mass);
    if (tail > 1e-12)
        std::cerr << "warning: truncated partition function drops a relative tail of " << tail
                  << " at beta=" << config.params.beta << "; consider a larger truncation\n";
}

int run_simulate(const CommonOptions& opt) {
    qpiston::RunConfig config = load(opt);
    warn_truncated_partition(config);
    qpiston::InitialState initial = qpiston::resolve_pressure(config);
    qpiston::Trajectory traj = std::visit(
        [&](const auto& s) {
            return qpiston::simulate(config.params, qpiston::SelfConsistent{}, s);
        },
        initial);
    std::filesystem::create_directories(opt.out_dir);
    const std::filesystem::path path = std::filesystem::path(opt.out_dir) / "trajectory.csv";
    qpiston::CsvMetadata meta{"simulate", "", {{"initial_state", config.initial.name()}}};
    qpiston::write_trajectory_csv(path, traj, meta);
    qpiston::write_sidecar_metadata(path, traj.params, meta);
    std::cout << path.string() << '\n';
    return 0;
}

int run_scenario_cmd(const CommonOptions& opt, const std::string& name, bool plots) {
    qpiston::ScenarioSpec spec;
    spec.name = name;
    spec.base = load(opt);
    spec.out_dir = std::filesystem::path(opt.out_dir) / name;
    spec.plots = plots;
    for (const auto& path : qpiston::run_scenario(spec))
        std::cout << path.string() << '\n';
    return 0;
}

int run_sweep(const CommonOptions& opt, double from, double to, int points) {
    qpiston::ScenarioSpec spec;
    spec.name = "equilibrium_sweep";
    spec.base = load(opt);
    spec.out_dir = std::filesystem::path(opt.out_dir) / "sweep";
    std::filesystem::create_directories(spec.out_dir);
    for (const auto& path : qpiston::scenario_detail::equilibrium_sweep(spec, from, to, points))
        std::cout << path.string() << '\n';
    return 0;
}

int run_jarzynski(const CommonOptions& opt) {
    qpiston::RunConfig config = load(opt);
    config.initial = {qpiston::InitialStateSpec::Kind::thermal, 1};
    warn_truncated_partition(config);
    qpiston::InitialState initial = qpiston::resolve_pressure(config);
    config.params.sample_stride = std::max(config.params.sample_stride, 10);
    qpiston::Trajectory traj = std::visit(
        [&](const auto& s) {
            return qpiston::simulate(config.params, qpiston::SelfConsistent{}, s);
        },
        initial);
    const qpiston::WorkStatistics stats =
        qpiston::two_point_work_statistics(traj, config.params.beta);

    std::filesystem::create_directories(opt.out_dir);
    const std::filesystem::path path = std::filesystem::path(opt.out_dir) / "jarzynski.csv";
    qpiston::CsvWriter csv(path);
    qpiston::CsvMetadata meta{"jarzynski", "8", {}};
    qpiston::write_metadata_lines(csv, meta, traj.params);
    csv.header({"t", "jarzynski_lhs", "jarzynski_rhs", "difference", "W_mean", "W_irr",
                "delta_F"});
    for (size_t i = 0; i < stats.times.size(); ++i)
        csv.row({stats.times[i], stats.jarzynski_lhs[i], stats.jarzynski_rhs[i],
                 stats.jarzynski_lhs[i] - stats.jarzynski_rhs[i], stats.mean_work[i],
                 stats.irreversible_work[i], stats.delta_free_energy[i]});
    qpiston::write_sidecar_metadata(path, traj.params, meta);
    std::cout << path.string() << '\n';
    return 0;
}

int run_convergence(const CommonOptions& opt) {
    qpiston::RunConfig config = load(opt);
    if (config.initial.kind == qpiston::InitialStateSpec::Kind::ground &&
        !config.pressure_ratio && !config.external_pressure)
        config.pressure_ratio = 1.1;
    const qpiston::ConvergenceReport report = qpiston::convergence_report(config);
    const auto path = qpiston::write_convergence_report(opt.out_dir, config, report);
    std::cout << path.string() << '\n';
    std::printf("dt deviations: L %.3e  U %.3e  pop1 %.3e  (order ~ %.2f)\n",
                report.dt_dev_length, report.dt_dev_energy, report.dt_dev_ground_pop,
                report.order_estimate);
    std::printf("K vs 2K deviations: L %.3e  U %.3e  pop1 %.3e  jarzynski %.3e\n",
                report.k_dev_length, report.k_dev_energy, report.k_dev_ground_pop,
                report.k_dev_jarzynski);
    std::printf("deterministic rerun: %s\n", report.deterministic ? "yes" : "no");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"coupled quantum-classical piston simulator"};
    app.require_subcommand(1);

    CommonOptions sim_opt, scen_opt, sweep_opt, jarz_opt, conv_opt;
    std::string scenario_name;
    bool plots = false;
    double sweep_from = 0.8, sweep_to = 2.5;
    int sweep_points = 35;

    auto* sim = app.add_subcommand("simulate", "run one self-consistent simulation");
    add_common(sim, sim_opt);

    auto* scen = app.add_subcommand("scenario", "reproduce one published experiment");
    add_common(scen, scen_opt);
    scen->add_option("name", scenario_name, "scenario name")
        ->required()
        ->check(CLI::IsMember(qpiston::scenario_names()));
    scen->add_flag("--plots", plots, "also emit SVG quick-look charts");

    auto* sweep = app.add_subcommand("sweep", "sweep the external-pressure ratio");
    add_common(sweep, sweep_opt);
    sweep->add_option("--from", sweep_from, "lowest P0/P(0)");
    sweep->add_option("--to", sweep_to, "highest P0/P(0)");
    sweep->add_option("--points", sweep_points, "number of sweep points");

    auto* jarz = app.add_subcommand("jarzynski", "two-point work statistics of a thermal run");
    add_common(jarz, jarz_opt);

    auto* conv = app.add_subcommand("convergence", "time-step and truncation convergence report");
    add_common(conv, conv_opt);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed())
            return run_simulate(sim_opt);
        if (scen->parsed())
            return run_scenario_cmd(scen_opt, scenario_name, plots);
        if (sweep->parsed())
            return run_sweep(sweep_opt, sweep_from, sweep_to, sweep_points);
        if (jarz->parsed())
            return run_jarzynski(jarz_opt);
        if (conv->parsed())
            return run_convergence(conv_opt);
    } catch (const qpiston::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const qpiston::StateError& e) {
        std::cerr << "state error: " << e.what() << '\n';
        return 3;
    } catch (const qpiston::IntegrationError& e) {
        std::cerr << "integration error: " << e.what() << '\n';
        return 4;
    } catch (const qpiston::IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
