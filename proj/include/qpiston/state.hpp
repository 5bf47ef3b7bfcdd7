#pragma once

// Quantum states over the truncated basis (pure amplitudes and density
// matrices), the classical wall state, the full parameter set, and thermal
// state construction.

#include <cmath>
#include <complex>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qpiston/basis.hpp"
#include "qpiston/errors.hpp"

namespace qpiston {

enum class FrictionMode {
    none,           // no friction term
    symmetric,      // -gamma V for both signs of V
    expansion_only, // -gamma V only while expanding (h(V), with h(0) = 0)
};

inline std::string to_string(FrictionMode mode) {
    switch (mode) {
    case FrictionMode::none: return "none";
    case FrictionMode::symmetric: return "symmetric";
    case FrictionMode::expansion_only: return "expansion_only";
    }
    return "?";
}

inline FrictionMode friction_mode_from_string(const std::string& name) {
    if (name == "none") return FrictionMode::none;
    if (name == "symmetric") return FrictionMode::symmetric;
    if (name == "expansion_only") return FrictionMode::expansion_only;
    throw ConfigError("friction_mode: unknown value '" + name +
                      "' (expected none | symmetric | expansion_only)");
}

// All physical and numerical parameters of a run. external_pressure is the
// resolved absolute value; configs usually specify it as a ratio to the
// initial state's pressure (see config.hpp).
struct SimParams {
    double particle_mass = 1.0;
    double wall_mass = 0.05;
    double wall_section = 1.0;
    double gamma = 10.0; // friction coefficient (force per velocity)
    FrictionMode friction_mode = FrictionMode::expansion_only;
    double external_pressure = 0.0;
    double dephasing_rate = 0.0; // Gamma
    double beta = 0.1;           // inverse temperature for thermal machinery
    int truncation = 20;         // K
    double time_step = 1e-4;     // dt (may be auto-refined, see dynamics)
    double total_time = 2.0;     // T
    int sample_stride = 1;       // record observables every stride-th step
    bool auto_refine_dt = true;  // halve dt until the startup Richardson estimate passes
    bool record_states = true;   // keep state snapshots in trajectory samples

    void validate() const {
        auto positive = [](double v, const char* key) {
            if (!(v > 0.0))
                throw ConfigError(std::string(key) + " must be positive, got " +
                                  std::to_string(v));
        };
        auto non_negative = [](double v, const char* key) {
            if (!(v >= 0.0))
                throw ConfigError(std::string(key) + " must be non-negative, got " +
                                  std::to_string(v));
        };
        positive(particle_mass, "particle_mass");
        positive(wall_mass, "wall_mass");
        positive(wall_section, "wall_section");
        positive(time_step, "time_step");
        positive(total_time, "total_time");
        positive(beta, "beta");
        non_negative(gamma, "gamma");
        non_negative(external_pressure, "external_pressure");
        non_negative(dephasing_rate, "dephasing_rate");
        if (truncation < 2)
            throw ConfigError("truncation must be at least 2, got " +
                              std::to_string(truncation));
        if (sample_stride < 1)
            throw ConfigError("sample_stride must be at least 1, got " +
                              std::to_string(sample_stride));
    }
};

// Classical wall: box length and wall velocity. length must stay positive
// during integration; a violation is a wall crash, reported as a hard error.
struct WallState {
    double length = 1.0;
    double velocity = 0.0;
};

// Pure state: amplitudes c_n over the eigenstates of H(0), n = 1..K.
struct PureState {
    Eigen::VectorXcd amplitudes;

    PureState() = default;
    explicit PureState(Eigen::VectorXcd c) : amplitudes(std::move(c)) {}

    static PureState ground(int levels) {
        PureState s{Eigen::VectorXcd::Zero(levels)};
        s.amplitudes(0) = 1.0;
        return s;
    }
    static PureState eigenstate(int levels, int n) {
        if (n < 1 || n > levels)
            throw ConfigError("eigenstate index " + std::to_string(n) +
                              " outside 1.." + std::to_string(levels));
        PureState s{Eigen::VectorXcd::Zero(levels)};
        s.amplitudes(n - 1) = 1.0;
        return s;
    }

    int levels() const { return static_cast<int>(amplitudes.size()); }
    double norm_squared() const { return amplitudes.squaredNorm(); }
    Eigen::VectorXd populations() const { return amplitudes.cwiseAbs2(); }

    void check_normalized(double tol = 1e-8) const {
        const double drift = std::abs(norm_squared() - 1.0);
        if (drift > tol)
            throw StateError("pure state norm drift " + std::to_string(drift) +
                             " exceeds tolerance");
    }
};

// Mixed state: density matrix over the truncated basis.
struct MixedState {
    Eigen::MatrixXcd density;

    MixedState() = default;
    explicit MixedState(Eigen::MatrixXcd rho) : density(std::move(rho)) {}

    static MixedState from_pure(const PureState& s) {
        return MixedState{s.amplitudes * s.amplitudes.adjoint()};
    }

    int levels() const { return static_cast<int>(density.rows()); }
    double trace() const { return density.trace().real(); }
    double purity() const { return (density * density).trace().real(); }
    Eigen::VectorXd populations() const { return density.diagonal().real(); }

    // Hermiticity within 1e-10, unit trace within 1e-8, eigenvalues >= -1e-8.
    void validate(double herm_tol = 1e-10, double trace_tol = 1e-8,
                  double positivity_tol = 1e-8) const {
        const double herm = (density - density.adjoint()).cwiseAbs().maxCoeff();
        if (herm > herm_tol)
            throw StateError("density matrix not Hermitian: residual " + std::to_string(herm));
        const double tr_drift = std::abs(trace() - 1.0);
        if (tr_drift > trace_tol)
            throw StateError("density matrix trace drift " + std::to_string(tr_drift));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(density,
                                                               Eigen::EigenvaluesOnly);
        const double min_eig = solver.eigenvalues().minCoeff();
        if (min_eig < -positivity_tol)
            throw StateError("density matrix eigenvalue " + std::to_string(min_eig) +
                             " below positivity tolerance");
    }
};

// log of the truncated partition function, evaluated with the ground energy
// factored out so large beta stays finite
inline double log_partition_function(double beta, double length, int levels,
                                     double mass = 1.0) {
    if (!(beta > 0.0))
        throw ConfigError("partition_function: beta must be positive");
    const Eigen::VectorXd energies = energy_levels(levels, length, mass);
    double shifted = 0.0;
    for (int n = 0; n < levels; ++n)
        shifted += std::exp(-beta * (energies(n) - energies(0)));
    return -beta * energies(0) + std::log(shifted);
}

// Truncated partition function Z(beta, L) = sum_{n<=K} exp(-beta E_n(L)).
inline double partition_function(double beta, double length, int levels, double mass = 1.0) {
    return std::exp(log_partition_function(beta, length, levels, mass));
}

// Fraction of the untruncated partition function dropped by keeping K levels,
// relative to the truncated sum. Used to warn when K is too small for beta/L.
inline double partition_truncation_tail(double beta, double length, int levels,
                                        double mass = 1.0) {
    const double scale =
        std::numbers::pi * std::numbers::pi * kHbar * kHbar / (2.0 * mass * length * length);
    double kept = 0.0; // sums shifted by the ground energy for stability
    for (int n = 1; n <= levels; ++n)
        kept += std::exp(-beta * scale * (static_cast<double>(n) * n - 1.0));
    double tail = 0.0;
    for (int n = levels + 1; n <= levels + 4096; ++n) {
        const double term = std::exp(-beta * scale * (static_cast<double>(n) * n - 1.0));
        tail += term;
        if (term < 1e-300)
            break;
    }
    return tail / kept;
}

struct ThermalState {
    MixedState state;
    double partition;
};

// Diagonal Gibbs state over the truncated basis at inverse temperature beta.
// Populations are strictly decreasing in n.
inline ThermalState thermal_state(double beta, double length, int levels, double mass = 1.0) {
    if (!(beta > 0.0))
        throw ConfigError("thermal_state: beta must be positive");
    const Eigen::VectorXd energies = energy_levels(levels, length, mass);
    Eigen::VectorXd weights(levels); // shifted by the ground energy for stability
    for (int n = 0; n < levels; ++n)
        weights(n) = std::exp(-beta * (energies(n) - energies(0)));
    const double shifted_sum = weights.sum();
    Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(levels, levels);
    for (int n = 0; n < levels; ++n)
        rho(n, n) = weights(n) / shifted_sum;
    return ThermalState{MixedState{std::move(rho)},
                        std::exp(-beta * energies(0)) * shifted_sum};
}

enum class Frame {
    transformed, // fixed unit domain z in [0, 1]
    physical,    // x in [0, L], psi(x) = phi(x/L)/sqrt(L)
};

// Pointwise wavefunction evaluation on a grid. Out-of-domain points are a
// domain error.
inline std::vector<std::complex<double>> wavefunction(const PureState& state, double length,
                                                      const std::vector<double>& grid,
                                                      Frame frame = Frame::transformed) {
    if (!(length > 0.0))
        throw StateError("wavefunction: box length must be positive");
    const double domain = (frame == Frame::transformed) ? 1.0 : length;
    std::vector<std::complex<double>> values;
    values.reserve(grid.size());
    const int levels = state.levels();
    for (double x : grid) {
        if (x < 0.0 || x > domain)
            throw StateError("wavefunction: grid point " + std::to_string(x) +
                             " outside [0, " + std::to_string(domain) + "]");
        const double z = (frame == Frame::transformed) ? x : x / length;
        std::complex<double> value = 0.0;
        for (int n = 1; n <= levels; ++n)
            value += state.amplitudes(n - 1) * basis_wavefunction(n, z);
        if (frame == Frame::physical)
            value /= std::sqrt(length);
        values.push_back(value);
    }
    return values;
}

namespace detail {
// \int_0^a sin(p x) sin(q x) dx
inline double sine_product_integral(double p, double q, double a) {
    if (std::abs(p - q) < 1e-12 * (std::abs(p) + std::abs(q)))
        return 0.5 * a - std::sin(2.0 * p * a) / (4.0 * p);
    return std::sin((p - q) * a) / (2.0 * (p - q)) - std::sin((p + q) * a) / (2.0 * (p + q));
}
} // namespace detail

// Physical-frame overlap <psi_a|psi_b> between states living in boxes of
// (possibly different) lengths; integration runs over the common support.
// Evaluated with the closed form of the sine-product integrals.
inline std::complex<double> physical_overlap(const PureState& state_a, double length_a,
                                             const PureState& state_b, double length_b) {
    if (!(length_a > 0.0) || !(length_b > 0.0))
        throw StateError("physical_overlap: box lengths must be positive");
    const double common = std::min(length_a, length_b);
    const int ka = state_a.levels();
    const int kb = state_b.levels();
    std::complex<double> overlap = 0.0;
    const double norm = 2.0 / std::sqrt(length_a * length_b);
    for (int n = 1; n <= ka; ++n) {
        const std::complex<double> an = std::conj(state_a.amplitudes(n - 1));
        if (std::abs(an) == 0.0)
            continue;
        for (int m = 1; m <= kb; ++m) {
            const std::complex<double> bm = state_b.amplitudes(m - 1);
            if (std::abs(bm) == 0.0)
                continue;
            const double p = n * std::numbers::pi / length_a;
            const double q = m * std::numbers::pi / length_b;
            overlap += an * bm * norm * detail::sine_product_integral(p, q, common);
        }
    }
    return overlap;
}

// --- plain-text state records -------------------------------------------
// Pure:  one line per amplitude,   "n re im"     (1-based n)
// Mixed: one line per matrix entry "n k re im"   (1-based n, k)

inline void write_state(std::ostream& out, const PureState& state) {
    out.precision(17);
    for (int n = 1; n <= state.levels(); ++n)
        out << n << ' ' << state.amplitudes(n - 1).real() << ' '
            << state.amplitudes(n - 1).imag() << '\n';
}

inline void write_state(std::ostream& out, const MixedState& state) {
    out.precision(17);
    for (int n = 1; n <= state.levels(); ++n)
        for (int k = 1; k <= state.levels(); ++k)
            out << n << ' ' << k << ' ' << state.density(n - 1, k - 1).real() << ' '
                << state.density(n - 1, k - 1).imag() << '\n';
}

inline PureState read_pure_state(std::istream& in) {
    std::vector<std::complex<double>> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream fields(line);
        long n = 0;
        double re = 0.0, im = 0.0;
        if (!(fields >> n >> re >> im))
            throw IoError("pure state record: malformed line '" + line + "'");
        if (n != static_cast<long>(entries.size()) + 1)
            throw IoError("pure state record: expected index " +
                          std::to_string(entries.size() + 1) + ", got " + std::to_string(n));
        entries.emplace_back(re, im);
    }
    if (entries.size() < 2)
        throw IoError("pure state record: fewer than two amplitudes");
    Eigen::VectorXcd c(entries.size());
    for (size_t i = 0; i < entries.size(); ++i)
        c(static_cast<Eigen::Index>(i)) = entries[i];
    return PureState{std::move(c)};
}

inline MixedState read_mixed_state(std::istream& in) {
    std::vector<std::tuple<long, long, std::complex<double>>> entries;
    std::string line;
    long max_index = 0;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream fields(line);
        long n = 0, k = 0;
        double re = 0.0, im = 0.0;
        if (!(fields >> n >> k >> re >> im))
            throw IoError("mixed state record: malformed line '" + line + "'");
        entries.emplace_back(n, k, std::complex<double>(re, im));
        max_index = std::max({max_index, n, k});
    }
    if (max_index < 2)
        throw IoError("mixed state record: fewer than two levels");
    Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(max_index, max_index);
    for (auto& [n, k, value] : entries)
        rho(n - 1, k - 1) = value;
    return MixedState{std::move(rho)};
}

} // namespace qpiston
