#pragma once

// Truncated eigenbasis of the initial box Hamiltonian: analytic overlap
// matrix, level energies, and the effective Hamiltonian generating the
// fixed-domain dynamics when the wall moves.
//
// Natural units throughout: hbar = 1, initial length L0 = 1; the particle
// mass defaults to 1 and is kept explicit where it enters.

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "qpiston/errors.hpp"

namespace qpiston {

inline constexpr double kHbar = 1.0;

// Basis wavefunctions on the unit interval, 1-based quantum number:
// phi_n(z) = sqrt(2) sin(n pi z).
inline double basis_wavefunction(int n, double z) {
    return std::numbers::sqrt2 * std::sin(n * std::numbers::pi * z);
}

struct BasisConfig {
    int levels; // K, number of lowest eigenstates retained

    explicit BasisConfig(int k) : levels(k) {
        if (k < 2)
            throw ConfigError("basis truncation must keep at least 2 levels, got " +
                              std::to_string(k));
    }
};

// Matrix of integrals I[n][k] = \int_0^1 z phi_n(z) phi_k'(z) dz, n,k = 1..K.
// Closed form: I[n][n] = -1/2, I[n][k] = (-1)^(n+k) 2nk/(k^2-n^2) otherwise.
// The off-diagonal part is antisymmetric, so I + I^T = -Identity exactly.
// L- and t-independent; computed once per run and shared read-only.
inline Eigen::MatrixXd overlap_matrix(int levels) {
    BasisConfig cfg(levels);
    Eigen::MatrixXd overlap(levels, levels);
    for (int n = 1; n <= levels; ++n) {
        for (int k = 1; k <= levels; ++k) {
            if (n == k) {
                overlap(n - 1, k - 1) = -0.5;
            } else {
                const double sign = ((n + k) % 2 == 0) ? 1.0 : -1.0;
                overlap(n - 1, k - 1) =
                    sign * 2.0 * n * k / (static_cast<double>(k) * k - static_cast<double>(n) * n);
            }
        }
    }
    return overlap;
}

// Box spectrum E_n(L) = n^2 pi^2 hbar^2 / (2 m L^2), n = 1..K.
inline Eigen::VectorXd energy_levels(int levels, double length, double mass = 1.0) {
    if (levels < 1)
        throw ConfigError("energy_levels: need at least one level");
    if (!(length > 0.0))
        throw StateError("energy_levels: box length must be positive, got " +
                         std::to_string(length));
    Eigen::VectorXd energies(levels);
    const double scale =
        std::numbers::pi * std::numbers::pi * kHbar * kHbar / (2.0 * mass * length * length);
    for (int n = 1; n <= levels; ++n)
        energies(n - 1) = scale * n * n;
    return energies;
}

// Effective Hamiltonian H*(L, V): diagonal box spectrum plus the
// velocity-proportional coupling i hbar (V/L) I[n][k] on the off-diagonal.
// Hermitian by construction (i times a real antisymmetric matrix); its
// commutator action reproduces the basis amplitude equations, the
// diagonal -1/2 of I cancelling the standalone amplitude term.
inline Eigen::MatrixXcd effective_hamiltonian(double length, double velocity,
                                              const Eigen::MatrixXd& overlap,
                                              double mass = 1.0) {
    if (!(length > 0.0))
        throw StateError("effective_hamiltonian: box length must be positive, got " +
                         std::to_string(length));
    const int levels = static_cast<int>(overlap.rows());
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(levels, levels);
    const Eigen::VectorXd energies = energy_levels(levels, length, mass);
    const double coupling = kHbar * velocity / length;
    for (int n = 0; n < levels; ++n) {
        h(n, n) = energies(n);
        for (int k = 0; k < levels; ++k) {
            if (n != k)
                h(n, k) = std::complex<double>(0.0, coupling * overlap(n, k));
        }
    }
    return h;
}

} // namespace qpiston
