#pragma once

// Thermodynamic observables along recorded runs: internal energy, relative-
// entropy production, friction work, free-energy differences, ground-state
// fidelity, and the two-point-measurement work statistics behind the
// Jarzynski check. All thermodynamic references use the physical box
// Hamiltonian H(t) (diagonal in the fixed basis); H*(t) is reserved for the
// dynamics and for the dephasing-basis observables.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qpiston/dynamics.hpp"
#include "qpiston/parallel.hpp"
#include "qpiston/state.hpp"

namespace qpiston {

inline double internal_energy(const PureState& state, double length, double mass = 1.0) {
    return internal_energy_from_populations(state.populations(), length, mass);
}

inline double internal_energy(const MixedState& state, double length, double mass = 1.0) {
    return internal_energy_from_populations(state.populations(), length, mass);
}

// Relative entropy S(rho || rho_eq(t)) with rho_eq = exp(-beta H(t)) / Z(t).
// Eigenvalues of rho below 1e-14 contribute nothing to tr[rho log rho]
// (0 log 0 := 0); eigenvalues below -1e-8 are a positivity error. Tiny
// negative results from cancellation (> -1e-12) are floored to zero.
inline double entropy_production(const MixedState& rho, double beta, double length,
                                 double mass = 1.0) {
    if (!(beta > 0.0))
        throw ConfigError("entropy_production: beta must be positive");
    const int levels = rho.levels();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(rho.density, Eigen::EigenvaluesOnly);
    double tr_rho_log_rho = 0.0;
    for (int i = 0; i < levels; ++i) {
        const double lam = solver.eigenvalues()(i);
        if (lam < -1e-8)
            throw StateError("entropy_production: density eigenvalue " + std::to_string(lam) +
                             " below positivity tolerance");
        if (lam > 1e-14)
            tr_rho_log_rho += lam * std::log(lam);
    }
    const double energy = internal_energy(rho, length, mass);
    const double log_z = log_partition_function(beta, length, levels, mass);
    // -tr[rho log rho_eq] = beta U + log Z  (rho_eq diagonal in the fixed basis)
    double sigma = tr_rho_log_rho + beta * energy + log_z;
    if (sigma < 0.0 && sigma > -1e-12)
        sigma = 0.0;
    return sigma;
}

// Pure states have zero von Neumann entropy: S(rho||rho_eq) = beta U + log Z.
inline double entropy_production(const PureState& state, double beta, double length,
                                 double mass = 1.0) {
    if (!(beta > 0.0))
        throw ConfigError("entropy_production: beta must be positive");
    state.check_normalized();
    return beta * internal_energy(state, length, mass) +
           log_partition_function(beta, length, state.levels(), mass);
}

// |W_fric|(t) accumulated by the trapezoidal rule along the recorded wall
// track, one value per integrator step. Non-decreasing.
inline std::vector<double> friction_work(const Trajectory& traj) {
    const SimParams& p = traj.params;
    auto integrand = [&](double v) {
        return p.gamma * friction_factor(v, p.friction_mode) * v * v;
    };
    std::vector<double> work(traj.step_velocity.size(), 0.0);
    for (size_t i = 1; i < work.size(); ++i)
        work[i] = work[i - 1] + p.time_step * 0.5 *
                                    (integrand(traj.step_velocity[i - 1]) +
                                     integrand(traj.step_velocity[i]));
    return work;
}

// Helmholtz free-energy difference between thermal states at two lengths,
// computed from the truncated partition sums.
inline double free_energy_difference(double beta, double length_t, double length_0, int levels,
                                     double mass = 1.0) {
    return -(log_partition_function(beta, length_t, levels, mass) -
             log_partition_function(beta, length_0, levels, mass)) /
           beta;
}

// ---------------------------------------------------------------------------
// two-point-measurement work statistics

struct WorkOutcome {
    double work;        // E_m(t) - E_n(0), work done on the particle
    double probability; // p(m,t|n) p_n
};

struct WorkDistribution {
    double time = 0.0;
    std::vector<WorkOutcome> outcomes;

    double total_probability() const {
        double sum = 0.0;
        for (const auto& o : outcomes)
            sum += o.probability;
        return sum;
    }
};

struct JarzynskiCheck {
    double lhs;        // < exp(-beta W) >
    double rhs;        // exp(-beta dF) = Z(t) / Z(0)
    double difference; // lhs - rhs
};

inline JarzynskiCheck jarzynski_check(const WorkDistribution& dist, double beta,
                                      double delta_free_energy) {
    double lhs = 0.0;
    for (const auto& o : dist.outcomes) {
        if (o.probability == 0.0)
            continue; // guard: 0 * exp(large) must not produce NaN
        lhs += o.probability * std::exp(-beta * o.work);
    }
    const double rhs = std::exp(-beta * delta_free_energy);
    return JarzynskiCheck{lhs, rhs, lhs - rhs};
}

struct MeanWork {
    double mean;         // <W(t)>, two-point convention
    double irreversible; // <W(t)> - dF(t)
};

inline MeanWork mean_work_and_irreversible(const WorkDistribution& dist,
                                           double delta_free_energy) {
    double mean = 0.0;
    for (const auto& o : dist.outcomes)
        mean += o.probability * o.work;
    return MeanWork{mean, mean - delta_free_energy};
}

namespace detail {

// Conditional transition probabilities p(m, t | n) for every recorded sample
// of the base run, obtained by replaying each initial eigenstate |n> over the
// recorded wall track. cond[sample](m, n) = |c_m^(n)(t_sample)|^2.
struct ConditionalProbabilities {
    std::vector<double> times;
    std::vector<double> lengths;
    std::vector<Eigen::MatrixXd> cond;
};

inline ConditionalProbabilities replay_conditionals(const Trajectory& base) {
    const int levels = base.params.truncation;
    SimParams replay_params = base.params;
    replay_params.auto_refine_dt = false;
    replay_params.record_states = false;

    const size_t n_samples = base.samples.size();
    ConditionalProbabilities out;
    out.times.resize(n_samples);
    out.lengths.resize(n_samples);
    for (size_t s = 0; s < n_samples; ++s) {
        out.times[s] = base.samples[s].time;
        out.lengths[s] = base.samples[s].length;
    }
    out.cond.assign(n_samples, Eigen::MatrixXd::Zero(levels, levels));

    std::vector<Trajectory> replays(levels);
    parallel_for(levels, [&](int n) {
        replays[n] = simulate(replay_params, Replay{&base},
                              PureState::eigenstate(levels, n + 1));
    });
    for (int n = 0; n < levels; ++n) {
        const Trajectory& r = replays[n];
        if (r.samples.size() != n_samples)
            throw IntegrationError("work statistics: replay sample count mismatch");
        for (size_t s = 0; s < n_samples; ++s)
            out.cond[s].col(n) = r.samples[s].populations;
    }
    return out;
}

} // namespace detail

// Per-sample thermodynamic series assembled from the two-point-measurement
// protocol: replay every initial eigenstate once, then evaluate the work
// moments and both sides of the Jarzynski equality at each sample.
struct WorkStatistics {
    double beta = 0.0;
    double mass = 1.0;
    std::vector<double> times;
    std::vector<double> mean_work;
    std::vector<double> irreversible_work;
    std::vector<double> delta_free_energy;
    std::vector<double> jarzynski_lhs;
    std::vector<double> jarzynski_rhs;
    std::vector<Eigen::MatrixXd> conditional; // cond[s](m, n) = p(m, t_s | n)
    std::vector<double> lengths;
    Eigen::VectorXd initial_weights; // thermal p_n at t = 0
};

inline WorkStatistics two_point_work_statistics(const Trajectory& base, double beta) {
    if (base.samples.empty())
        throw ConfigError("work statistics: empty trajectory");
    const int levels = base.params.truncation;
    const double mass = base.params.particle_mass;
    const double length0 = base.samples.front().length;

    auto cond = detail::replay_conditionals(base);
    const Eigen::VectorXd energies0 = energy_levels(levels, length0, mass);
    const double log_z0 = log_partition_function(beta, length0, levels, mass);
    Eigen::VectorXd weights(levels);
    for (int n = 0; n < levels; ++n)
        weights(n) = std::exp(-beta * (energies0(n) - energies0(0)));
    weights /= weights.sum();

    WorkStatistics stats;
    stats.beta = beta;
    stats.mass = mass;
    stats.times = cond.times;
    stats.lengths = cond.lengths;
    stats.conditional = std::move(cond.cond);
    stats.initial_weights = weights;
    const size_t n_samples = stats.times.size();
    stats.mean_work.resize(n_samples);
    stats.irreversible_work.resize(n_samples);
    stats.delta_free_energy.resize(n_samples);
    stats.jarzynski_lhs.resize(n_samples);
    stats.jarzynski_rhs.resize(n_samples);

    for (size_t s = 0; s < n_samples; ++s) {
        const double length = stats.lengths[s];
        const Eigen::VectorXd energies = energy_levels(levels, length, mass);
        const double z_ratio =
            std::exp(log_partition_function(beta, length, levels, mass) - log_z0);
        const Eigen::MatrixXd& c = stats.conditional[s];

        double mean = 0.0;
        double lhs = 0.0;
        for (int n = 0; n < levels; ++n) {
            const double pn = weights(n);
            if (pn == 0.0)
                continue;
            for (int m = 0; m < levels; ++m) {
                const double prob = pn * c(m, n);
                if (prob == 0.0)
                    continue;
                const double work = energies(m) - energies0(n);
                mean += prob * work;
                lhs += prob * std::exp(-beta * work);
            }
        }
        const double delta_f = -std::log(z_ratio) / beta;
        stats.mean_work[s] = mean;
        stats.delta_free_energy[s] = delta_f;
        stats.irreversible_work[s] = mean - delta_f;
        stats.jarzynski_lhs[s] = lhs;
        stats.jarzynski_rhs[s] = z_ratio;
    }
    return stats;
}

inline WorkDistribution extract_distribution(const WorkStatistics& stats, size_t sample) {
    if (sample >= stats.times.size())
        throw ConfigError("work distribution: sample index out of range");
    const int levels = static_cast<int>(stats.initial_weights.size());
    const Eigen::VectorXd energies0 =
        energy_levels(levels, stats.lengths.front(), stats.mass);
    const Eigen::VectorXd energies =
        energy_levels(levels, stats.lengths[sample], stats.mass);
    WorkDistribution dist;
    dist.time = stats.times[sample];
    dist.outcomes.reserve(static_cast<size_t>(levels) * levels);
    const Eigen::MatrixXd& c = stats.conditional[sample];
    for (int n = 0; n < levels; ++n)
        for (int m = 0; m < levels; ++m)
            dist.outcomes.push_back(WorkOutcome{energies(m) - energies0(n),
                                                stats.initial_weights(n) * c(m, n)});
    return dist;
}

// Work distribution at a single recorded time. `time` must match a sample of
// the base trajectory (within half a step).
inline WorkDistribution work_distribution(const Trajectory& base, double beta, double time) {
    size_t index = base.samples.size();
    for (size_t s = 0; s < base.samples.size(); ++s) {
        if (std::abs(base.samples[s].time - time) <= base.params.time_step / 2) {
            index = s;
            break;
        }
    }
    if (index == base.samples.size())
        throw IntegrationError("work_distribution: t=" + std::to_string(time) +
                               " is not a recorded sample time");
    const auto stats = two_point_work_statistics(base, beta);
    return extract_distribution(stats, index);
}

// ---------------------------------------------------------------------------
// fidelity and dephasing-basis observables

// Overlap with the instantaneous ground state of the physical Hamiltonian
// (the first fixed-basis state in the transformed frame).
inline double ground_state_fidelity(const PureState& state) {
    return std::abs(state.amplitudes(0));
}

inline double ground_state_fidelity(const MixedState& state) {
    return std::sqrt(std::max(0.0, state.density(0, 0).real()));
}

// Alternative reference: the ground state of the effective Hamiltonian H*.
inline double hstar_ground_state_fidelity(const MixedState& state,
                                          const Eigen::MatrixXcd& h_star) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(h_star);
    const Eigen::VectorXcd ground = solver.eigenvectors().col(0);
    return std::sqrt(std::max(0.0, (ground.adjoint() * state.density * ground)(0, 0).real()));
}

inline double hstar_ground_state_fidelity(const PureState& state,
                                          const Eigen::MatrixXcd& h_star) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(h_star);
    return std::abs((solver.eigenvectors().col(0).adjoint() * state.amplitudes)(0, 0));
}

struct HstarObservables {
    Eigen::VectorXd populations; // diagonal of rho in the H* eigenbasis (ascending)
    double coherence_01;         // |rho_01| between the two lowest H* eigenstates
    double purity;
};

inline HstarObservables hstar_basis_observables(const MixedState& rho,
                                                const Eigen::MatrixXcd& h_star) {
    const double herm = (h_star - h_star.adjoint()).cwiseAbs().maxCoeff();
    if (herm > 1e-10 * std::max(1.0, h_star.cwiseAbs().maxCoeff()))
        throw StateError("hstar_basis_observables: generator is not Hermitian");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(h_star);
    const Eigen::MatrixXcd in_basis =
        solver.eigenvectors().adjoint() * rho.density * solver.eigenvectors();
    HstarObservables obs;
    obs.populations = in_basis.diagonal().real();
    obs.coherence_01 = std::abs(in_basis(0, 1));
    obs.purity = rho.purity();
    return obs;
}

// ---------------------------------------------------------------------------
// per-sample thermodynamic record

struct ThermoRecord {
    std::vector<double> times;
    std::vector<double> entropy_production; // Sigma(t) >= 0
    std::vector<double> friction_work;
    std::vector<double> delta_free_energy;
    std::vector<double> fidelity_ground;
    std::vector<double> purity;
    double min_fidelity = 1.0;
};

// Thermodynamic series along a recorded run (no replays; the work moments
// live in WorkStatistics).
inline ThermoRecord thermo_series(const Trajectory& traj, double beta) {
    if (!traj.params.record_states)
        throw ConfigError("thermo_series: trajectory was recorded without state snapshots");
    const double mass = traj.params.particle_mass;
    const int levels = traj.params.truncation;
    const double length0 = traj.samples.front().length;
    ThermoRecord rec;
    rec.times.reserve(traj.samples.size());
    for (const auto& s : traj.samples) {
        rec.times.push_back(s.time);
        double sigma = 0.0;
        double fid = 0.0;
        if (s.mixed) {
            sigma = qpiston::entropy_production(*s.mixed, beta, s.length, mass);
            fid = ground_state_fidelity(*s.mixed);
        } else if (s.pure) {
            sigma = qpiston::entropy_production(*s.pure, beta, s.length, mass);
            fid = ground_state_fidelity(*s.pure);
        } else {
            throw ConfigError("thermo_series: sample has no state snapshot");
        }
        rec.entropy_production.push_back(sigma);
        rec.friction_work.push_back(s.friction_work);
        rec.delta_free_energy.push_back(
            free_energy_difference(beta, s.length, length0, levels, mass));
        rec.fidelity_ground.push_back(fid);
        rec.purity.push_back(s.purity);
        rec.min_fidelity = std::min(rec.min_fidelity, fid);
    }
    return rec;
}

} // namespace qpiston
