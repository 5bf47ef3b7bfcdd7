#include <catch_amalgamated.hpp>

#include <numbers>

#include "qpiston/basis.hpp"
#include "qpiston/dynamics.hpp"
#include "oracles.hpp"

using namespace qpiston;
using Catch::Matchers::WithinAbs;
using std::numbers::pi;

TEST_CASE("overlap matrix closed form matches the quadrature oracle", "[basis]") {
    // frozen values from the quadrature oracle
    const Eigen::MatrixXd small = overlap_matrix(3);
    CHECK_THAT(small(0, 0), WithinAbs(-0.5, 1e-12));
    CHECK_THAT(small(0, 1), WithinAbs(-4.0 / 3.0, 1e-12));
    CHECK_THAT(small(0, 2), WithinAbs(0.75, 1e-12));
    CHECK_THAT(small(1, 0), WithinAbs(4.0 / 3.0, 1e-12)); // antisymmetry of the (1,2) entry

    const int levels = 40;
    const Eigen::MatrixXd overlap = overlap_matrix(levels);
    double max_err = 0.0;
    for (int n = 1; n <= levels; ++n)
        for (int k = 1; k <= levels; ++k)
            max_err = std::max(max_err,
                               std::abs(overlap(n - 1, k - 1) - oracles::overlap_entry(n, k)));
    CHECK(max_err <= 1e-10);
}

TEST_CASE("overlap matrix satisfies I + I^T = -Identity exactly", "[basis]") {
    const Eigen::MatrixXd overlap = overlap_matrix(32);
    const Eigen::MatrixXd residual =
        overlap + overlap.transpose() + Eigen::MatrixXd::Identity(32, 32);
    CHECK(residual.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("overlap matrix rejects truncations below two levels", "[basis]") {
    CHECK_THROWS_AS(overlap_matrix(1), ConfigError);
    CHECK_THROWS_AS(overlap_matrix(0), ConfigError);
}

TEST_CASE("energy levels follow the box spectrum", "[basis]") {
    const Eigen::VectorXd e = energy_levels(3, 1.0);
    CHECK_THAT(e(0), WithinAbs(pi * pi / 2.0, 1e-12));
    CHECK_THAT(e(1), WithinAbs(2.0 * pi * pi, 1e-12));
    CHECK_THAT(e(2), WithinAbs(4.5 * pi * pi, 1e-12));

    CHECK_THAT(energy_levels(1, 2.0)(0), WithinAbs(pi * pi / 8.0, 1e-12));

    // L -> infinity limit
    CHECK(energy_levels(2, 1e8).maxCoeff() < 1e-12);

    CHECK_THROWS_AS(energy_levels(3, 0.0), StateError);
    CHECK_THROWS_AS(energy_levels(3, -1.0), StateError);
}

TEST_CASE("energy levels scale exactly as 1/L^2", "[basis]") {
    for (double length : {0.3, 0.7, 1.0, 2.5, 10.0}) {
        const Eigen::VectorXd scaled = energy_levels(8, length) * (length * length);
        const Eigen::VectorXd reference = energy_levels(8, 1.0);
        CHECK((scaled - reference).cwiseAbs().maxCoeff() <= 1e-12 * reference.maxCoeff());
    }
}

TEST_CASE("effective Hamiltonian reduces to the spectrum at rest", "[basis]") {
    const Eigen::MatrixXd overlap = overlap_matrix(5);
    const Eigen::MatrixXcd h = effective_hamiltonian(0.8, 0.0, overlap);
    const Eigen::VectorXd e = energy_levels(5, 0.8);
    for (int n = 0; n < 5; ++n)
        for (int k = 0; k < 5; ++k) {
            if (n == k)
                CHECK_THAT(h(n, k).real(), WithinAbs(e(n), 1e-12));
            else
                CHECK(std::abs(h(n, k)) == 0.0);
        }
}

TEST_CASE("effective Hamiltonian carries the velocity coupling", "[basis]") {
    // off-diagonal = i (V/L) I[n][k]; the (1,2) entry at V=1, L=1 is -(4/3)i,
    // fixed by the amplitude equations (see the amplitude-derivative test)
    const Eigen::MatrixXd overlap = overlap_matrix(2);
    const Eigen::MatrixXcd h = effective_hamiltonian(1.0, 1.0, overlap);
    CHECK_THAT(h(0, 1).imag(), WithinAbs(-4.0 / 3.0, 1e-12));
    CHECK_THAT(h(0, 1).real(), WithinAbs(0.0, 1e-15));
    CHECK_THAT(h(1, 0).imag(), WithinAbs(4.0 / 3.0, 1e-12));
}

TEST_CASE("effective Hamiltonian is exactly Hermitian", "[basis]") {
    const Eigen::MatrixXd overlap = overlap_matrix(10);
    const Eigen::MatrixXcd h = effective_hamiltonian(0.7, -3.0, overlap);
    CHECK((h - h.adjoint()).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(effective_hamiltonian(0.0, 1.0, overlap), StateError);
}

TEST_CASE("commutator action reproduces the amplitude equations", "[basis][dynamics]") {
    const int levels = 10;
    const Eigen::MatrixXd overlap = overlap_matrix(levels);
    const Eigen::VectorXcd c = oracles::random_amplitudes(levels, 1234);
    const double length = 0.9, velocity = 2.3;

    const Eigen::VectorXcd direct = amplitude_derivatives(c, length, velocity, overlap);
    const Eigen::MatrixXcd h = effective_hamiltonian(length, velocity, overlap);
    const Eigen::VectorXcd via_h = std::complex<double>(0, -1) * (h * c);
    CHECK((direct - via_h).cwiseAbs().maxCoeff() <= 1e-12 * direct.cwiseAbs().maxCoeff());
}
