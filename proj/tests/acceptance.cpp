// Acceptance suite: every criterion runs at its stated tolerance and prints
// one pass/fail line. Exit code is the number of failed criteria.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "qpiston/config.hpp"
#include "qpiston/dynamics.hpp"
#include "qpiston/parallel.hpp"
#include "qpiston/scenarios.hpp"
#include "qpiston/thermo.hpp"
#include "oracles.hpp"

using namespace qpiston;
using std::numbers::pi;

namespace {

struct Criterion {
    int id;
    std::string name;
    std::function<std::string()> run; // returns "" on pass, details on failure
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

SimParams ground_params(double ratio) {
    SimParams p;
    p.external_pressure = ratio * pi * pi;
    p.sample_stride = 10;
    p.record_states = false;
    return p;
}

SimParams thermal_run_params(double ratio, int stride = 10) {
    SimParams p;
    const ThermalState init = thermal_state(p.beta, 1.0, p.truncation);
    p.external_pressure = ratio * pressure(init.state, 1.0, p);
    p.sample_stride = stride;
    return p;
}

double max_abs_velocity(const Trajectory& traj) {
    double vmax = 0.0;
    for (double v : traj.step_velocity)
        vmax = std::max(vmax, std::abs(v));
    return vmax;
}

// --- criterion 1 -----------------------------------------------------------

std::string overlap_oracle() {
    const int levels = 40;
    const Eigen::MatrixXd overlap = overlap_matrix(levels);
    double max_err = 0.0;
    for (int n = 1; n <= levels; ++n)
        for (int k = 1; k <= levels; ++k)
            max_err = std::max(max_err,
                               std::abs(overlap(n - 1, k - 1) - oracles::overlap_entry(n, k)));
    if (max_err > 1e-10)
        return "closed form deviates from quadrature by " + fmt(max_err);
    const double identity_residual =
        (overlap + overlap.transpose() + Eigen::MatrixXd::Identity(levels, levels))
            .cwiseAbs()
            .maxCoeff();
    if (identity_residual != 0.0)
        return "I + I^T + Id residual " + fmt(identity_residual) + " (expected exactly 0)";
    return "";
}

// --- criterion 2 -----------------------------------------------------------

std::string conservation_suite() {
    std::ostringstream problems;

    SimParams pure_params = ground_params(1.1);
    const Trajectory pure = simulate(pure_params, SelfConsistent{}, PureState::ground(20));
    double norm_drift = 0.0;
    for (const auto& s : pure.samples)
        norm_drift = std::max(norm_drift, std::abs(s.populations.sum() - 1.0));
    if (norm_drift > 1e-8)
        problems << "pure norm drift " << fmt(norm_drift) << "; ";

    SimParams mixed_params = thermal_run_params(1.1);
    mixed_params.record_states = false;
    const ThermalState init = thermal_state(mixed_params.beta, 1.0, 20);
    const Trajectory mixed = simulate(mixed_params, SelfConsistent{}, init.state);
    double trace_drift = 0.0, purity_drift = 0.0;
    for (const auto& s : mixed.samples) {
        trace_drift = std::max(trace_drift, std::abs(s.populations.sum() - 1.0));
        purity_drift = std::max(purity_drift, std::abs(s.purity - mixed.front().purity));
    }
    if (trace_drift > 1e-8)
        problems << "trace drift " << fmt(trace_drift) << "; ";
    if (purity_drift > 1e-8)
        problems << "purity drift " << fmt(purity_drift) << "; ";
    return problems.str();
}

// --- criterion 3 -----------------------------------------------------------

std::string adiabatic_anchors() {
    std::ostringstream problems;
    for (double v : {-0.01, 0.01}) {
        SimParams p;
        p.external_pressure = pi * pi;
        p.total_time = 1.0 / (2.0 * std::abs(v));
        p.sample_stride = 1000;
        p.record_states = false;
        const Trajectory traj = simulate(p, ConstantVelocity{v}, PureState::ground(20));
        double min_pop = 1.0;
        for (const auto& s : traj.samples)
            min_pop = std::min(min_pop, s.populations(0));
        if (min_pop < 0.999)
            problems << "slow V=" << v << " ground population dropped to " << fmt(min_pop)
                     << "; ";
    }
    {
        SimParams p;
        p.external_pressure = pi * pi;
        p.total_time = 1.0 / (2.0 * 100.0);
        p.sample_stride = 10;
        const Trajectory traj = simulate(p, ConstantVelocity{100.0}, PureState::ground(20));
        const double overlap2 = std::norm(physical_overlap(
            PureState::ground(20), 1.0, *traj.back().pure, traj.back().length));
        if (overlap2 < 0.99)
            problems << "fast expansion overlap " << fmt(overlap2) << " < 0.99; ";
    }
    return problems.str();
}

// --- criterion 4 -----------------------------------------------------------

std::string mechanical_equilibrium() {
    std::ostringstream problems;
    for (double ratio : {0.9, 1.1}) {
        SimParams p = ground_params(ratio);
        const Trajectory traj = simulate(p, SelfConsistent{}, PureState::ground(20));
        const auto& last = traj.back();
        const double force_residual =
            std::abs(2.0 * last.energy / last.length -
                     p.wall_section * p.external_pressure) /
            (p.wall_section * p.external_pressure);
        const double vmax = max_abs_velocity(traj);
        if (force_residual > 1e-2)
            problems << "ratio " << ratio << ": force residual " << fmt(force_residual)
                     << "; ";
        if (std::abs(last.velocity) > 0.01 * vmax)
            problems << "ratio " << ratio << ": |V(T)| = " << fmt(std::abs(last.velocity))
                     << " above 1% of " << fmt(vmax) << "; ";
    }

    // without friction the same criterion must fail: at no sample are the
    // force imbalance and the velocity simultaneously below 1% of their maxima
    SimParams p = ground_params(1.1);
    p.friction_mode = FrictionMode::none;
    const Trajectory traj = simulate(p, SelfConsistent{}, PureState::ground(20));
    double force_max = 0.0, vmax = 0.0;
    std::vector<double> force;
    force.reserve(traj.samples.size());
    for (const auto& s : traj.samples) {
        force.push_back(std::abs(2.0 * s.energy / s.length -
                                 p.wall_section * p.external_pressure));
        force_max = std::max(force_max, force.back());
        vmax = std::max(vmax, std::abs(s.velocity));
    }
    for (size_t i = 0; i < traj.samples.size(); ++i) {
        if (force[i] < 0.01 * force_max &&
            std::abs(traj.samples[i].velocity) < 0.01 * vmax) {
            problems << "frictionless run reached a stationary point at t="
                     << traj.samples[i].time << "; ";
            break;
        }
    }
    return problems.str();
}

// --- criterion 5 -----------------------------------------------------------

std::string asymmetric_friction_signature() {
    std::ostringstream problems;

    SimParams p = ground_params(1.1); // expansion_only friction is the default
    const Trajectory traj = simulate(p, SelfConsistent{}, PureState::ground(20));
    const double vmax = max_abs_velocity(traj);
    int neg_to_pos = 0, pos_to_neg = 0, state = 0;
    for (double v : traj.step_velocity) {
        if (v < -1e-9 * vmax) {
            if (state == 1)
                ++pos_to_neg;
            state = -1;
        } else if (v > 1e-9 * vmax) {
            if (state == -1)
                ++neg_to_pos;
            state = 1;
        }
    }
    if (neg_to_pos != 1 || pos_to_neg != 0)
        problems << "velocity crossings: " << neg_to_pos << " up, " << pos_to_neg
                 << " down (expected exactly one up); ";

    RunConfig base;
    base.initial = {InitialStateSpec::Kind::thermal, 1};
    base.params.record_states = false;
    const auto sweep = equilibrium_sweep_points(base, 0.8, 2.5, 8);
    bool rebound = false;
    for (const auto& point : sweep)
        if (point.ratio > 1.0 && point.final_length > 1.0)
            rebound = true;
    if (!rebound)
        problems << "no compression ratio in [0.8, 2.5] ended with L(T) > L0; ";
    return problems.str();
}

// --- criterion 6 -----------------------------------------------------------

Trajectory dephasing_acceptance_run(double rate, double gamma_wall) {
    SimParams p;
    p.truncation = 40;
    p.gamma = gamma_wall;
    p.dephasing_rate = rate;
    p.external_pressure = 1.1 * pi * pi; // ground-state initial pressure
    p.sample_stride = 20;
    p.record_states = false;
    return simulate(p, SelfConsistent{}, MixedState::from_pure(PureState::ground(40)));
}

std::string dephasing_phenomenology() {
    std::ostringstream problems;

    // scenario default rate set {0, 1, 10, 100} at the overdamped wall
    const std::vector<double> rates{0.0, 1.0, 10.0, 100.0};
    std::vector<double> min_purity(rates.size(), 1.0);
    std::vector<Trajectory> shift_runs(2);
    parallel_for(static_cast<int>(rates.size()) + 2, [&](int i) {
        if (i < static_cast<int>(rates.size())) {
            const Trajectory traj = dephasing_acceptance_run(rates[i], 10.0);
            double mp = 1.0;
            for (const auto& s : traj.samples)
                mp = std::min(mp, s.purity);
            min_purity[i] = mp;
        } else {
            // underdamped wall for the equilibrium-length shift (gamma = 1)
            shift_runs[i - rates.size()] =
                dephasing_acceptance_run(i - rates.size() == 0 ? 0.0 : 10.0, 1.0);
        }
    });

    const size_t lowest =
        std::min_element(min_purity.begin(), min_purity.end()) - min_purity.begin();
    const bool non_monotonic = min_purity.back() > min_purity[lowest];
    if (lowest == min_purity.size() - 1 || !non_monotonic) {
        problems << "minimum purity is monotonic in the dephasing rate (";
        for (double mp : min_purity)
            problems << fmt(mp) << " ";
        problems << "); ";
    }

    const double l0 = shift_runs[0].back().length;
    const double l10 = shift_runs[1].back().length;
    if (!((l10 - l0) / l0 > 0.0))
        problems << "dephasing length shift at T: " << fmt((l10 - l0) / l0)
                 << " (expected positive, gamma = 1 underdamped wall); ";
    return problems.str();
}

// --- criterion 7 -----------------------------------------------------------

std::string thermodynamic_identities() {
    std::ostringstream problems;
    for (double ratio : {0.9, 1.1}) {
        SimParams p = thermal_run_params(ratio);
        const ThermalState init = thermal_state(p.beta, 1.0, p.truncation);
        const Trajectory traj = simulate(p, SelfConsistent{}, init.state);
        const ThermoRecord record = thermo_series(traj, p.beta);
        const WorkStatistics stats = two_point_work_statistics(traj, p.beta);

        const double u0 = traj.front().energy;
        double worst_identity = 0.0, worst_jarzynski = 0.0, most_negative = 0.0;
        for (size_t s = 0; s < record.times.size(); ++s) {
            most_negative = std::min(most_negative, record.entropy_production[s]);
            const double expected =
                p.beta * (traj.samples[s].energy - u0 - record.delta_free_energy[s]);
            worst_identity = std::max(worst_identity,
                                      std::abs(record.entropy_production[s] - expected));
            worst_jarzynski =
                std::max(worst_jarzynski,
                         std::abs(stats.jarzynski_lhs[s] - stats.jarzynski_rhs[s]));
        }
        if (most_negative < 0.0)
            problems << "ratio " << ratio << ": entropy production dipped to "
                     << fmt(most_negative) << "; ";
        if (worst_identity > 1e-6)
            problems << "ratio " << ratio << ": |Sigma - beta(dU - dF)| = "
                     << fmt(worst_identity) << " > 1e-6; ";
        if (worst_jarzynski > 1e-3)
            problems << "ratio " << ratio << ": |<e^{-bW}> - e^{-b dF}| = "
                     << fmt(worst_jarzynski) << " > 1e-3; ";
    }
    return problems.str();
}

// --- criterion 8 -----------------------------------------------------------

std::string fidelity_anchors() {
    std::ostringstream problems;
    auto min_fidelity = [](double wall_mass) {
        SimParams p;
        p.wall_mass = wall_mass;
        p.gamma = 10.0 * wall_mass / 0.05;
        p.external_pressure = 0.9 * pi * pi; // initial expansion
        p.sample_stride = 10;
        p.record_states = false;
        const Trajectory traj = simulate(p, SelfConsistent{}, PureState::ground(20));
        double min_fid = 1.0;
        for (const auto& s : traj.samples)
            min_fid = std::min(min_fid, std::sqrt(std::max(0.0, s.populations(0))));
        return min_fid;
    };
    const double light = min_fidelity(0.001);
    if (light < 0.995 || light > 0.999)
        problems << "M=0.001 minimum fidelity " << fmt(light)
                 << " outside 0.997 +- 0.002; ";
    const double heavy = min_fidelity(1.0);
    if (heavy < 0.9999)
        problems << "M=1 minimum fidelity " << fmt(heavy) << " < 0.9999; ";
    return problems.str();
}

// --- criterion 9 -----------------------------------------------------------

std::string numerical_convergence() {
    std::ostringstream problems;
    RunConfig base;
    base.initial = {InitialStateSpec::Kind::thermal, 1};
    base.pressure_ratio = 1.1;
    const ConvergenceReport report = convergence_report(base);

    if (report.order_estimate < 3.0 || report.order_estimate > 5.2)
        problems << "observed integrator order " << fmt(report.order_estimate) << "; ";
    const double k_dev =
        std::max({report.k_dev_length, report.k_dev_energy, report.k_dev_ground_pop});
    if (k_dev > 1e-3)
        problems << "K=20 vs K=40 deviation " << fmt(k_dev) << " > 1e-3; ";
    if (report.k_dev_jarzynski > 1e-3)
        problems << "Jarzynski-difference deviation " << fmt(report.k_dev_jarzynski)
                 << " > 1e-3; ";
    if (!report.deterministic)
        problems << "identical reruns differ; ";
    return problems.str();
}

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "overlap-matrix oracle (closed form vs quadrature, exact antisymmetry)",
         overlap_oracle},
        {2, "conservation suite (norm, trace, purity over the default run)",
         conservation_suite},
        {3, "adiabatic and sudden constant-velocity anchors", adiabatic_anchors},
        {4, "mechanical equilibrium with friction, none without", mechanical_equilibrium},
        {5, "asymmetric-friction signature and rebound past the initial length",
         asymmetric_friction_signature},
        {6, "dephasing phenomenology (purity non-monotonicity, equilibrium shift)",
         dephasing_phenomenology},
        {7, "thermodynamic identities and the Jarzynski equality", thermodynamic_identities},
        {8, "fidelity anchors for light and heavy walls", fidelity_anchors},
        {9, "numerical convergence and determinism", numerical_convergence},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        std::string details;
        try {
            details = criterion.run();
        } catch (const std::exception& e) {
            details = std::string("exception: ") + e.what();
        }
        if (details.empty()) {
            std::printf("[PASS] criterion %d: %s\n", criterion.id, criterion.name.c_str());
        } else {
            std::printf("[FAIL] criterion %d: %s -- %s\n", criterion.id,
                        criterion.name.c_str(), details.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    if (failures == 0)
        std::printf("all %zu acceptance criteria passed\n", criteria.size());
    else
        std::printf("%d of %zu acceptance criteria failed\n", failures, criteria.size());
    return failures;
}
