#pragma once

// Coupled classical-quantum integration: the wall follows Newtonian dynamics
// under quantum pressure, constant external pressure and friction, while the
// particle amplitudes (or density matrix) evolve in the fixed-domain frame.
// Three drive modes: self-consistent, constant wall velocity, and replay of
// a recorded (L, V) track.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "qpiston/basis.hpp"
#include "qpiston/errors.hpp"
#include "qpiston/state.hpp"

namespace qpiston {

// ---------------------------------------------------------------------------
// trajectory record

struct TrajectorySample {
    double time = 0.0;
    double length = 1.0;
    double velocity = 0.0;
    double energy = 0.0;   // U = <H(t)>
    double pressure = 0.0; // quantum pressure on the wall
    double friction_work = 0.0;
    double purity = 1.0;
    double energy_residual = 0.0; // model-consistency diagnostic, not asserted
    Eigen::VectorXd populations;
    std::optional<PureState> pure;
    std::optional<MixedState> mixed;
};

struct Trajectory {
    SimParams params; // as used (time_step may have been refined)
    std::string mode; // "self_consistent" | "constant_velocity" | "replay"
    int stride = 1;
    // full-resolution wall track, one entry per integrator step (N + 1 total)
    std::vector<double> step_length;
    std::vector<double> step_velocity;
    std::vector<TrajectorySample> samples;

    double dt() const { return params.time_step; }
    double recorded_time() const {
        return step_length.empty() ? 0.0
                                   : params.time_step *
                                         static_cast<double>(step_length.size() - 1);
    }
    const TrajectorySample& front() const { return samples.front(); }
    const TrajectorySample& back() const { return samples.back(); }
};

// ---------------------------------------------------------------------------
// drive modes

struct SelfConsistent {};

struct ConstantVelocity {
    double velocity = 0.0;
};

struct Replay {
    const Trajectory* record = nullptr;
    // linear-interpolation error estimates (max second difference / 8) above
    // these bounds raise a replay-resolution error
    double position_tol = 1e-6;
    double velocity_tol = 1e-3;
};

using SimMode = std::variant<SelfConsistent, ConstantVelocity, Replay>;

inline std::string mode_name(const SimMode& mode) {
    if (std::holds_alternative<SelfConsistent>(mode)) return "self_consistent";
    if (std::holds_alternative<ConstantVelocity>(mode)) return "constant_velocity";
    return "replay";
}

// ---------------------------------------------------------------------------
// elementary pieces

// Quantum pressure P = <p^2>_phys / (m L Sigma) = 2U / (L Sigma).
inline double pressure_from_energy(double energy, double length, const SimParams& params) {
    if (!(length > 0.0))
        throw StateError("pressure: box length must be positive");
    return 2.0 * energy / (length * params.wall_section);
}

inline double internal_energy_from_populations(const Eigen::VectorXd& populations,
                                               double length, double mass) {
    const Eigen::VectorXd energies =
        energy_levels(static_cast<int>(populations.size()), length, mass);
    return populations.dot(energies);
}

inline double pressure(const PureState& state, double length, const SimParams& params) {
    return pressure_from_energy(
        internal_energy_from_populations(state.populations(), length, params.particle_mass),
        length, params);
}

inline double pressure(const MixedState& state, double length, const SimParams& params) {
    return pressure_from_energy(
        internal_energy_from_populations(state.populations(), length, params.particle_mass),
        length, params);
}

// Friction switch: 1 (symmetric), h(V) with h(0) = 0 (expansion_only), 0 (none).
inline double friction_factor(double velocity, FrictionMode mode) {
    switch (mode) {
    case FrictionMode::none: return 0.0;
    case FrictionMode::symmetric: return 1.0;
    case FrictionMode::expansion_only: return velocity > 0.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

struct WallDerivatives {
    double dlength;
    double dvelocity;
};

// Newton's law for the wall: M dV/dt = 2U/L - Sigma P0 - gamma f(V) V.
inline WallDerivatives wall_derivatives(const WallState& wall, double energy,
                                        const SimParams& params) {
    if (!(wall.length > 0.0))
        throw StateError("wall_derivatives: box length must be positive");
    const double force = 2.0 * energy / wall.length -
                         params.wall_section * params.external_pressure -
                         params.gamma * friction_factor(wall.velocity, params.friction_mode) *
                             wall.velocity;
    return WallDerivatives{wall.velocity, force / params.wall_mass};
}

// Basis amplitude equations:
//   dc_n/dt = -i E_n(L)/hbar c_n + (V/2L) (c_n + 2 sum_k I[n][k] c_k),
// algebraically equal to -(i/hbar) (H* c)_n.
inline Eigen::VectorXcd amplitude_derivatives(const Eigen::VectorXcd& amplitudes, double length,
                                              double velocity, const Eigen::MatrixXd& overlap,
                                              double mass = 1.0) {
    if (overlap.rows() != amplitudes.size())
        throw ConfigError("amplitude_derivatives: overlap matrix is " +
                          std::to_string(overlap.rows()) + "x" + std::to_string(overlap.cols()) +
                          " but state has " + std::to_string(amplitudes.size()) + " levels");
    const Eigen::VectorXd energies =
        energy_levels(static_cast<int>(amplitudes.size()), length, mass);
    const Eigen::VectorXcd mixed = overlap * amplitudes;
    const double drift = velocity / (2.0 * length);
    Eigen::VectorXcd out(amplitudes.size());
    for (Eigen::Index n = 0; n < amplitudes.size(); ++n)
        out(n) = std::complex<double>(0.0, -energies(n) / kHbar) * amplitudes(n) +
                 drift * (amplitudes(n) + 2.0 * mixed(n));
    return out;
}

inline Eigen::VectorXcd amplitude_derivatives(const PureState& state, double length,
                                              double velocity, const Eigen::MatrixXd& overlap,
                                              double mass = 1.0) {
    return amplitude_derivatives(state.amplitudes, length, velocity, overlap, mass);
}

// ---------------------------------------------------------------------------
// dephasing channel

// Exact one-step solution of pure dephasing in the eigenbasis of h_star:
// transform, multiply every off-diagonal element by exp(-rate dt / 2),
// transform back. Eigenvalues are taken ascending; consecutive eigenvalues
// closer than degeneracy_gap form a block inside which nothing is damped
// (dephasing between degenerate states is basis-ambiguous).
inline MixedState dephase(const MixedState& rho, const Eigen::MatrixXcd& h_star, double rate,
                          double dt, double degeneracy_gap = 1e-10) {
    if (rate < 0.0)
        throw ConfigError("dephase: rate must be non-negative");
    if (h_star.rows() != rho.density.rows())
        throw ConfigError("dephase: dimension mismatch");
    const double herm = (h_star - h_star.adjoint()).cwiseAbs().maxCoeff();
    if (herm > 1e-10 * std::max(1.0, h_star.cwiseAbs().maxCoeff()))
        throw StateError("dephase: generator is not Hermitian (residual " +
                         std::to_string(herm) + ")");
    if (rate == 0.0 || dt == 0.0)
        return rho;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(h_star);
    if (solver.info() != Eigen::Success)
        throw StateError("dephase: eigendecomposition failed");
    const Eigen::MatrixXcd& vectors = solver.eigenvectors();
    const Eigen::VectorXd& values = solver.eigenvalues();

    const int levels = static_cast<int>(values.size());
    std::vector<int> block(levels, 0);
    for (int i = 1; i < levels; ++i)
        block[i] = (values(i) - values(i - 1) < degeneracy_gap) ? block[i - 1] : block[i - 1] + 1;

    Eigen::MatrixXcd in_eigenbasis = vectors.adjoint() * rho.density * vectors;
    const double damp = std::exp(-rate * dt / 2.0);
    for (int n = 0; n < levels; ++n)
        for (int k = 0; k < levels; ++k)
            if (block[n] != block[k])
                in_eigenbasis(n, k) *= damp;
    Eigen::MatrixXcd out = vectors * in_eigenbasis * vectors.adjoint();
    out = 0.5 * (out + out.adjoint().eval());
    return MixedState{std::move(out)};
}

// ---------------------------------------------------------------------------
// integrator internals

namespace detail {

// quantum-state traits shared by the pure and mixed integration paths
struct PureTraits {
    using Q = Eigen::VectorXcd;
    static Q derivative(const Q& q, double length, double velocity,
                        const Eigen::MatrixXd& overlap, double mass) {
        return amplitude_derivatives(q, length, velocity, overlap, mass);
    }
    static double weight(const Q& q) { return q.squaredNorm(); } // norm^2
    static Eigen::VectorXd populations(const Q& q) { return q.cwiseAbs2(); }
    static double purity(const Q& q) {
        const double n2 = q.squaredNorm();
        return n2 * n2;
    }
    static void tidy(Q&) {}
};

struct MixedTraits {
    using Q = Eigen::MatrixXcd;
    static Q derivative(const Q& q, double length, double velocity,
                        const Eigen::MatrixXd& overlap, double mass) {
        const Eigen::MatrixXcd h = effective_hamiltonian(length, velocity, overlap, mass);
        const Eigen::MatrixXcd hq = h * q;
        return std::complex<double>(0.0, -1.0 / kHbar) * (hq - hq.adjoint());
    }
    static double weight(const Q& q) { return q.trace().real(); } // trace
    static Eigen::VectorXd populations(const Q& q) { return q.diagonal().real(); }
    static double purity(const Q& q) { return (q * q).trace().real(); }
    static void tidy(Q& q) { q = 0.5 * (q + q.adjoint().eval()); } // keep Hermitian
};

template <class Traits> struct Joint {
    typename Traits::Q q;
    double length;
    double velocity;
};

// One classical RK4 step of the coupled (state, L, V) system.
template <class Traits>
Joint<Traits> coupled_rk4_step(const Joint<Traits>& y, double dt, const Eigen::MatrixXd& overlap,
                               const SimParams& params) {
    auto f = [&](const Joint<Traits>& s) -> Joint<Traits> {
        if (!(s.length > 0.0))
            throw IntegrationError("wall crash: box length reached " +
                                   std::to_string(s.length));
        const double energy = internal_energy_from_populations(
            Traits::populations(s.q), s.length, params.particle_mass);
        const WallDerivatives wall =
            wall_derivatives(WallState{s.length, s.velocity}, energy, params);
        return Joint<Traits>{
            Traits::derivative(s.q, s.length, s.velocity, overlap, params.particle_mass),
            wall.dlength, wall.dvelocity};
    };
    const Joint<Traits> k1 = f(y);
    const Joint<Traits> k2 = f({y.q + (dt / 2) * k1.q, y.length + (dt / 2) * k1.length,
                                y.velocity + (dt / 2) * k1.velocity});
    const Joint<Traits> k3 = f({y.q + (dt / 2) * k2.q, y.length + (dt / 2) * k2.length,
                                y.velocity + (dt / 2) * k2.velocity});
    const Joint<Traits> k4 =
        f({y.q + dt * k3.q, y.length + dt * k3.length, y.velocity + dt * k3.velocity});
    Joint<Traits> out{
        y.q + (dt / 6) * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q),
        y.length + (dt / 6) * (k1.length + 2.0 * k2.length + 2.0 * k3.length + k4.length),
        y.velocity +
            (dt / 6) * (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity)};
    Traits::tidy(out.q);
    return out;
}

// prescribed wall track: length, velocity, and the accumulated phase
// integral theta(t) = \int_0^t ds / L(s)^2 (exact for piecewise-linear L)
struct DrivePoint {
    double length;
    double velocity;
    double theta;
};

using DriveFn = std::function<DrivePoint(double)>;

// One RK4 step of the quantum state alone, wall track prescribed by drive(t).
// The pure path integrates in the interaction picture: the diagonal box
// phases exp(-i E_n(1) theta(t)) are factored out exactly, so the stepper
// only resolves the slow velocity coupling and stays accurate for every
// basis state, not just the low-lying ones.
template <class Drive>
Eigen::VectorXcd driven_rk4_step_pure(const Eigen::VectorXcd& rotated, double t, double dt,
                                      Drive&& drive, const Eigen::MatrixXd& overlap,
                                      const Eigen::VectorXd& unit_energies) {
    const DrivePoint p0 = drive(t);
    const DrivePoint pm = drive(t + dt / 2);
    const DrivePoint p1 = drive(t + dt);
    if (!(p0.length > 0.0) || !(pm.length > 0.0) || !(p1.length > 0.0))
        throw IntegrationError("wall crash: prescribed box length reached zero");

    const Eigen::Index n = rotated.size();
    auto deriv = [&](const Eigen::VectorXcd& a, const DrivePoint& p) -> Eigen::VectorXcd {
        Eigen::VectorXcd phase(n);
        for (Eigen::Index i = 0; i < n; ++i)
            phase(i) = std::polar(1.0, unit_energies(i) * p.theta / kHbar);
        const Eigen::VectorXcd coupled =
            overlap * phase.conjugate().cwiseProduct(a).matrix();
        const double drift = p.velocity / (2.0 * p.length);
        return drift * (a + 2.0 * phase.cwiseProduct(coupled));
    };
    const Eigen::VectorXcd k1 = deriv(rotated, p0);
    const Eigen::VectorXcd k2 = deriv(rotated + (dt / 2) * k1, pm);
    const Eigen::VectorXcd k3 = deriv(rotated + (dt / 2) * k2, pm);
    const Eigen::VectorXcd k4 = deriv(rotated + dt * k3, p1);
    return rotated + (dt / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// rotated (interaction-picture) amplitudes -> basis amplitudes
inline Eigen::VectorXcd unrotate(const Eigen::VectorXcd& rotated, double theta,
                                 const Eigen::VectorXd& unit_energies) {
    Eigen::VectorXcd c(rotated.size());
    for (Eigen::Index i = 0; i < rotated.size(); ++i)
        c(i) = std::polar(1.0, -unit_energies(i) * theta / kHbar) * rotated(i);
    return c;
}

// Mixed states under a prescribed drive keep the plain RK4 kernel.
template <class Drive>
Eigen::MatrixXcd driven_rk4_step_mixed(const Eigen::MatrixXcd& q, double t, double dt,
                                       Drive&& drive, const Eigen::MatrixXd& overlap,
                                       double mass) {
    const DrivePoint p0 = drive(t);
    const DrivePoint pm = drive(t + dt / 2);
    const DrivePoint p1 = drive(t + dt);
    if (!(p0.length > 0.0) || !(pm.length > 0.0) || !(p1.length > 0.0))
        throw IntegrationError("wall crash: prescribed box length reached zero");
    const Eigen::MatrixXcd k1 = MixedTraits::derivative(q, p0.length, p0.velocity, overlap, mass);
    const Eigen::MatrixXcd k2 =
        MixedTraits::derivative(q + (dt / 2) * k1, pm.length, pm.velocity, overlap, mass);
    const Eigen::MatrixXcd k3 =
        MixedTraits::derivative(q + (dt / 2) * k2, pm.length, pm.velocity, overlap, mass);
    const Eigen::MatrixXcd k4 =
        MixedTraits::derivative(q + dt * k3, p1.length, p1.velocity, overlap, mass);
    Eigen::MatrixXcd out = q + (dt / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    MixedTraits::tidy(out);
    return out;
}

inline DriveFn make_drive(const ConstantVelocity& mode) {
    const double v = mode.velocity;
    return [v](double t) {
        const double length = 1.0 + v * t;
        // theta(t) = \int_0^t ds / (1 + v s)^2 = t / L(t)
        return DrivePoint{length, v, t / length};
    };
}

inline void check_replay_resolution(const Replay& mode) {
    const Trajectory& rec = *mode.record;
    const auto& ls = rec.step_length;
    const auto& vs = rec.step_velocity;
    if (ls.size() < 3)
        throw IntegrationError("replay record too short");
    double max_dl = 0.0, max_dv = 0.0;
    for (size_t i = 1; i + 1 < ls.size(); ++i) {
        max_dl = std::max(max_dl, std::abs(ls[i + 1] - 2.0 * ls[i] + ls[i - 1]));
        max_dv = std::max(max_dv, std::abs(vs[i + 1] - 2.0 * vs[i] + vs[i - 1]));
    }
    if (max_dl / 8.0 > mode.position_tol || max_dv / 8.0 > mode.velocity_tol)
        throw IntegrationError(
            "replay record too coarse: interpolation error estimates (L: " +
            std::to_string(max_dl / 8.0) + ", V: " + std::to_string(max_dv / 8.0) +
            ") exceed tolerances");
}

inline DriveFn make_drive(const Replay& mode) {
    const Trajectory* rec = mode.record;
    const double dt_rec = rec->params.time_step;
    const size_t last = rec->step_length.size() - 1;
    // cumulative theta at the record nodes; within a segment L is linear, so
    // \int_{t_j}^{t} ds / L(s)^2 = (t - t_j) / (L_j L(t)) exactly
    auto theta_nodes = std::make_shared<std::vector<double>>(last + 1, 0.0);
    for (size_t j = 0; j < last; ++j)
        (*theta_nodes)[j + 1] =
            (*theta_nodes)[j] + dt_rec / (rec->step_length[j] * rec->step_length[j + 1]);
    return [rec, dt_rec, last, theta_nodes](double t) {
        double pos = t / dt_rec;
        if (pos < 0.0)
            pos = 0.0;
        size_t j = static_cast<size_t>(pos);
        if (j >= last)
            return DrivePoint{rec->step_length[last], rec->step_velocity[last],
                              (*theta_nodes)[last] +
                                  (t - dt_rec * static_cast<double>(last)) /
                                      (rec->step_length[last] * rec->step_length[last])};
        const double frac = pos - static_cast<double>(j);
        const double length =
            rec->step_length[j] + frac * (rec->step_length[j + 1] - rec->step_length[j]);
        const double velocity =
            rec->step_velocity[j] + frac * (rec->step_velocity[j + 1] - rec->step_velocity[j]);
        const double theta =
            (*theta_nodes)[j] + frac * dt_rec / (rec->step_length[j] * length);
        return DrivePoint{length, velocity, theta};
    };
}

} // namespace detail

// ---------------------------------------------------------------------------
// public single-step operations (self-consistent mode, dephasing included)

inline std::pair<PureState, WallState> step(const PureState& state, const WallState& wall,
                                            const SimParams& params,
                                            const Eigen::MatrixXd& overlap) {
    detail::Joint<detail::PureTraits> y{state.amplitudes, wall.length, wall.velocity};
    auto out = detail::coupled_rk4_step<detail::PureTraits>(y, params.time_step, overlap, params);
    if (!(out.length > 0.0))
        throw IntegrationError("wall crash: box length reached " + std::to_string(out.length));
    const double drift = std::abs(out.q.squaredNorm() - state.norm_squared());
    if (!(drift <= 1e-6))
        throw IntegrationError("integrator instability: per-step norm drift " +
                               std::to_string(drift));
    return {PureState{std::move(out.q)}, WallState{out.length, out.velocity}};
}

inline std::pair<MixedState, WallState> step(const MixedState& state, const WallState& wall,
                                             const SimParams& params,
                                             const Eigen::MatrixXd& overlap) {
    detail::Joint<detail::MixedTraits> y{state.density, wall.length, wall.velocity};
    auto out =
        detail::coupled_rk4_step<detail::MixedTraits>(y, params.time_step, overlap, params);
    if (!(out.length > 0.0))
        throw IntegrationError("wall crash: box length reached " + std::to_string(out.length));
    MixedState next{std::move(out.q)};
    if (params.dephasing_rate > 0.0) {
        const Eigen::MatrixXcd h = effective_hamiltonian(out.length, out.velocity, overlap,
                                                         params.particle_mass);
        next = dephase(next, h, params.dephasing_rate, params.time_step);
    }
    const double drift = std::abs(next.trace() - state.trace());
    if (!(drift <= 1e-6))
        throw IntegrationError("integrator instability: per-step trace drift " +
                               std::to_string(drift));
    return {std::move(next), WallState{out.length, out.velocity}};
}

// ---------------------------------------------------------------------------
// full simulation driver

namespace detail {

template <class Traits> struct Recorder {
    Trajectory traj;
    double initial_total = 0.0; // U0 + kinetic0, for the residual diagnostic
    double friction_integrand_prev = 0.0;
    double friction_accum = 0.0;

    Recorder(const SimParams& params, const std::string& mode) {
        traj.params = params;
        traj.mode = mode;
        traj.stride = params.sample_stride;
        const size_t steps = static_cast<size_t>(std::llround(params.total_time /
                                                              params.time_step));
        traj.step_length.reserve(steps + 1);
        traj.step_velocity.reserve(steps + 1);
        traj.samples.reserve(steps / static_cast<size_t>(params.sample_stride) + 2);
    }

    double friction_integrand(double velocity, const SimParams& p) const {
        return p.gamma * friction_factor(velocity, p.friction_mode) * velocity * velocity;
    }

    void record_step(const typename Traits::Q& q, double t, double length, double velocity,
                     long step_index, const SimParams& params) {
        traj.step_length.push_back(length);
        traj.step_velocity.push_back(velocity);
        const double g = friction_integrand(velocity, params);
        if (step_index > 0)
            friction_accum += params.time_step * 0.5 * (friction_integrand_prev + g);
        friction_integrand_prev = g;

        if (step_index % params.sample_stride != 0)
            return;
        TrajectorySample s;
        s.time = t;
        s.length = length;
        s.velocity = velocity;
        s.populations = Traits::populations(q);
        s.energy = internal_energy_from_populations(s.populations, length,
                                                    params.particle_mass);
        s.pressure = pressure_from_energy(s.energy, length, params);
        s.friction_work = friction_accum;
        s.purity = Traits::purity(q);
        const double kinetic = 0.5 * params.wall_mass * velocity * velocity;
        if (step_index == 0)
            initial_total = s.energy + kinetic;
        s.energy_residual = s.energy + kinetic +
                            params.wall_section * params.external_pressure * (length - 1.0) +
                            friction_accum - initial_total;
        if (params.record_states) {
            if constexpr (std::is_same_v<Traits, PureTraits>)
                s.pure = PureState{q};
            else
                s.mixed = MixedState{q};
        }
        if constexpr (std::is_same_v<Traits, MixedTraits>) {
            // positivity is monitored, not projected
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(q, Eigen::EigenvaluesOnly);
            const double min_eig = solver.eigenvalues().minCoeff();
            if (min_eig < -1e-8)
                throw StateError("density matrix eigenvalue " + std::to_string(min_eig) +
                                 " below positivity tolerance at t=" + std::to_string(t));
        }
        traj.samples.push_back(std::move(s));
    }
};

// advance `steps` integrator steps from the given joint state (probe helper)
template <class Traits>
Joint<Traits> advance_coupled(Joint<Traits> y, long steps, double dt,
                              const Eigen::MatrixXd& overlap, SimParams params) {
    params.time_step = dt;
    for (long i = 0; i < steps; ++i) {
        y = coupled_rk4_step<Traits>(y, dt, overlap, params);
        if constexpr (std::is_same_v<Traits, MixedTraits>) {
            if (params.dephasing_rate > 0.0) {
                const Eigen::MatrixXcd h =
                    effective_hamiltonian(y.length, y.velocity, overlap, params.particle_mass);
                y.q = dephase(MixedState{y.q}, h, params.dephasing_rate, dt).density;
            }
        }
    }
    return y;
}

template <class Traits, class Drive>
typename Traits::Q advance_driven(typename Traits::Q q, long steps, double dt, Drive&& drive,
                                  const Eigen::MatrixXd& overlap, SimParams params) {
    params.time_step = dt;
    if constexpr (std::is_same_v<Traits, PureTraits>) {
        const Eigen::VectorXd unit_energies =
            energy_levels(static_cast<int>(q.size()), 1.0, params.particle_mass);
        Eigen::VectorXcd rotated = q; // theta(0) = 0
        for (long i = 0; i < steps; ++i)
            rotated = driven_rk4_step_pure(rotated, static_cast<double>(i) * dt, dt, drive,
                                           overlap, unit_energies);
        return unrotate(rotated, drive(static_cast<double>(steps) * dt).theta, unit_energies);
    } else {
        for (long i = 0; i < steps; ++i) {
            const double t = static_cast<double>(i) * dt;
            q = driven_rk4_step_mixed(q, t, dt, drive, overlap, params.particle_mass);
            if (params.dephasing_rate > 0.0) {
                const DrivePoint p = drive(t + dt);
                const Eigen::MatrixXcd h =
                    effective_hamiltonian(p.length, p.velocity, overlap, params.particle_mass);
                q = dephase(MixedState{q}, h, params.dephasing_rate, dt).density;
            }
        }
        return q;
    }
}

template <class Q> double sup_difference(const Q& a, const Q& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

// Startup Richardson estimate: integrate ~100 steps at dt and dt/2 and halve
// dt until the states agree to 1e-8 in sup norm.
template <class Traits, class Probe>
double refine_time_step(double dt, double total_time, Probe&& probe) {
    constexpr double target = 1e-8;
    constexpr int max_halvings = 12;
    for (int attempt = 0; attempt < max_halvings; ++attempt) {
        const long steps = std::min<long>(100, std::max<long>(1, std::llround(total_time / dt)));
        const double err = probe(dt, steps);
        if (err <= target)
            return dt;
        dt /= 2.0;
    }
    throw IntegrationError("time-step refinement did not converge (dt reached " +
                           std::to_string(dt) + ")");
}

template <class Traits>
Trajectory run_simulation(SimParams params, const SimMode& mode, typename Traits::Q q0) {
    params.validate();
    if (static_cast<int>(q0.rows()) != params.truncation)
        throw ConfigError("initial state has " + std::to_string(q0.rows()) +
                          " levels but truncation is " + std::to_string(params.truncation));
    const Eigen::MatrixXd overlap = overlap_matrix(params.truncation);

    const bool coupled = std::holds_alternative<SelfConsistent>(mode);
    DriveFn drive;
    if (std::holds_alternative<ConstantVelocity>(mode)) {
        drive = make_drive(std::get<ConstantVelocity>(mode));
    } else if (std::holds_alternative<Replay>(mode)) {
        const Replay& replay = std::get<Replay>(mode);
        if (replay.record == nullptr)
            throw ConfigError("replay mode requires a recorded trajectory");
        if (replay.record->recorded_time() + 1e-12 < params.total_time)
            throw ConfigError("replay record covers " +
                              std::to_string(replay.record->recorded_time()) +
                              " time units but the run needs " +
                              std::to_string(params.total_time));
        check_replay_resolution(replay);
        drive = make_drive(replay);
    }

    if (params.auto_refine_dt) {
        WallState wall0;
        if (!coupled) {
            const DrivePoint p = drive(0.0);
            wall0.length = p.length;
            wall0.velocity = p.velocity;
        }
        auto probe = [&](double dt, long steps) {
            if (coupled) {
                Joint<Traits> start{q0, wall0.length, wall0.velocity};
                const auto coarse = advance_coupled<Traits>(start, steps, dt, overlap, params);
                const auto fine =
                    advance_coupled<Traits>(start, 2 * steps, dt / 2, overlap, params);
                return std::max({sup_difference(coarse.q, fine.q),
                                 std::abs(coarse.length - fine.length),
                                 std::abs(coarse.velocity - fine.velocity)});
            }
            const auto coarse = advance_driven<Traits>(q0, steps, dt, drive, overlap, params);
            const auto fine =
                advance_driven<Traits>(q0, 2 * steps, dt / 2, drive, overlap, params);
            return sup_difference(coarse, fine);
        };
        const double refined =
            refine_time_step<Traits>(params.time_step, params.total_time, probe);
        // keep the sample spacing dt * stride unchanged across refinement
        params.sample_stride = static_cast<int>(
            std::llround(params.sample_stride * params.time_step / refined));
        params.time_step = refined;
    }

    const long steps = std::llround(params.total_time / params.time_step);
    Recorder<Traits> rec(params, mode_name(mode));

    if (coupled) {
        Joint<Traits> y{std::move(q0), 1.0, 0.0};
        rec.record_step(y.q, 0.0, y.length, y.velocity, 0, params);
        double weight_prev = Traits::weight(y.q);
        for (long i = 0; i < steps; ++i) {
            y = coupled_rk4_step<Traits>(y, params.time_step, overlap, params);
            if (!(y.length > 0.0) || !std::isfinite(y.length) || !std::isfinite(y.velocity))
                throw IntegrationError("wall crash: box length reached " +
                                       std::to_string(y.length) + " at t=" +
                                       std::to_string((i + 1) * params.time_step));
            if constexpr (std::is_same_v<Traits, MixedTraits>) {
                if (params.dephasing_rate > 0.0) {
                    const Eigen::MatrixXcd h = effective_hamiltonian(
                        y.length, y.velocity, overlap, params.particle_mass);
                    y.q = dephase(MixedState{y.q}, h, params.dephasing_rate,
                                  params.time_step)
                              .density;
                }
            }
            const double weight = Traits::weight(y.q);
            if (!(std::abs(weight - weight_prev) <= 1e-6))
                throw IntegrationError("integrator instability: per-step drift " +
                                       std::to_string(std::abs(weight - weight_prev)) +
                                       " at t=" + std::to_string((i + 1) * params.time_step));
            weight_prev = weight;
            rec.record_step(y.q, (i + 1) * params.time_step, y.length, y.velocity, i + 1,
                            params);
        }
    } else if constexpr (std::is_same_v<Traits, PureTraits>) {
        const Eigen::VectorXd unit_energies =
            energy_levels(params.truncation, 1.0, params.particle_mass);
        Eigen::VectorXcd rotated = std::move(q0);
        DrivePoint p = drive(0.0);
        rec.record_step(rotated, 0.0, p.length, p.velocity, 0, params);
        double weight_prev = rotated.squaredNorm();
        for (long i = 0; i < steps; ++i) {
            const double t = static_cast<double>(i) * params.time_step;
            rotated = driven_rk4_step_pure(rotated, t, params.time_step, drive, overlap,
                                           unit_energies);
            p = drive(t + params.time_step);
            const double weight = rotated.squaredNorm();
            if (!(std::abs(weight - weight_prev) <= 1e-6))
                throw IntegrationError("integrator instability: per-step drift " +
                                       std::to_string(std::abs(weight - weight_prev)) +
                                       " at t=" + std::to_string(t + params.time_step));
            weight_prev = weight;
            rec.record_step(unrotate(rotated, p.theta, unit_energies), t + params.time_step,
                            p.length, p.velocity, i + 1, params);
        }
    } else {
        typename Traits::Q q = std::move(q0);
        DrivePoint p = drive(0.0);
        rec.record_step(q, 0.0, p.length, p.velocity, 0, params);
        double weight_prev = Traits::weight(q);
        for (long i = 0; i < steps; ++i) {
            const double t = static_cast<double>(i) * params.time_step;
            q = driven_rk4_step_mixed(q, t, params.time_step, drive, overlap,
                                      params.particle_mass);
            p = drive(t + params.time_step);
            if (params.dephasing_rate > 0.0) {
                const Eigen::MatrixXcd h =
                    effective_hamiltonian(p.length, p.velocity, overlap, params.particle_mass);
                q = dephase(MixedState{q}, h, params.dephasing_rate, params.time_step).density;
            }
            const double weight = Traits::weight(q);
            if (!(std::abs(weight - weight_prev) <= 1e-6))
                throw IntegrationError("integrator instability: per-step drift " +
                                       std::to_string(std::abs(weight - weight_prev)) +
                                       " at t=" + std::to_string(t + params.time_step));
            weight_prev = weight;
            rec.record_step(q, t + params.time_step, p.length, p.velocity, i + 1, params);
        }
    }
    return std::move(rec.traj);
}

} // namespace detail

// Run a full simulation. A pure initial state with a nonzero dephasing rate
// is promoted to a density matrix (the channel needs one).
inline Trajectory simulate(const SimParams& params, const SimMode& mode,
                           const PureState& initial) {
    if (params.dephasing_rate > 0.0)
        return detail::run_simulation<detail::MixedTraits>(
            params, mode, MixedState::from_pure(initial).density);
    return detail::run_simulation<detail::PureTraits>(params, mode, initial.amplitudes);
}

inline Trajectory simulate(const SimParams& params, const SimMode& mode,
                           const MixedState& initial) {
    return detail::run_simulation<detail::MixedTraits>(params, mode, initial.density);
}

} // namespace qpiston
