#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qpiston/scenarios.hpp"

using namespace qpiston;
using Catch::Matchers::WithinAbs;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "qpiston_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

// column values of a '#'-prefixed CSV
std::vector<double> csv_column(const std::filesystem::path& path, const std::string& name) {
    std::ifstream in(path);
    REQUIRE(in);
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::stringstream fields(line);
        std::string field;
        while (std::getline(fields, field, ','))
            header.push_back(field);
        break;
    }
    const auto it = std::find(header.begin(), header.end(), name);
    REQUIRE(it != header.end());
    const size_t index = static_cast<size_t>(it - header.begin());
    std::vector<double> values;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::stringstream fields(line);
        std::string field;
        size_t i = 0;
        while (std::getline(fields, field, ',')) {
            if (i++ == index)
                values.push_back(std::stod(field));
        }
    }
    return values;
}

} // namespace

TEST_CASE("unknown scenario names are rejected", "[harness]") {
    ScenarioSpec spec;
    spec.name = "warp_drive";
    spec.out_dir = fresh_dir("unknown");
    CHECK_THROWS_AS(run_scenario(spec), ConfigError);
}

TEST_CASE("trajectory CSV carries metadata, schema and 12-digit values", "[harness]") {
    SimParams p;
    p.external_pressure = 11.0;
    p.total_time = 0.01;
    p.truncation = 4;
    const Trajectory traj = simulate(p, SelfConsistent{}, PureState::ground(4));

    const auto dir = fresh_dir("csv");
    const auto path = dir / "traj.csv";
    write_trajectory_csv(path, traj, CsvMetadata{"unit", "2", {{"note", "check"}}});

    const std::string text = slurp(path);
    CHECK(text.find("# scenario: unit") != std::string::npos);
    CHECK(text.find("# figure: 2") != std::string::npos);
    CHECK(text.find("# params: {") != std::string::npos);
    CHECK(text.find("t,L,V,U,P,W_fric,purity,pop_1,pop_2,pop_3,pop_4,energy_residual") !=
          std::string::npos);

    const auto t = csv_column(path, "t");
    const auto pop1 = csv_column(path, "pop_1");
    REQUIRE(t.size() == traj.samples.size());
    CHECK_THAT(pop1.front(), WithinAbs(1.0, 1e-12));
}

TEST_CASE("scenario runs are reproducible byte for byte", "[harness][slow]") {
    auto run_once = [](const std::string& tag) {
        ScenarioSpec spec;
        spec.name = "friction_modes";
        spec.base.params.total_time = 0.2;
        spec.out_dir = fresh_dir(tag);
        return run_scenario(spec);
    };
    const auto first = run_once("determinism_a");
    const auto second = run_once("determinism_b");
    REQUIRE(first.size() == second.size());
    for (size_t i = 0; i < first.size(); ++i)
        CHECK(slurp(first[i]) == slurp(second[i]));
}

TEST_CASE("friction scenario reproduces the qualitative regimes", "[harness][slow]") {
    ScenarioSpec spec;
    spec.name = "friction_modes";
    spec.base.params.total_time = 2.0;
    spec.out_dir = fresh_dir("friction");
    run_scenario(spec);

    // frictionless compression keeps oscillating: the velocity keeps
    // changing sign; the damped expansion-only compression crosses zero once
    const auto v_none = csv_column(spec.out_dir / "friction_none_ratio1p1.csv", "V");
    int sign_changes = 0;
    for (size_t i = 1; i < v_none.size(); ++i)
        if ((v_none[i] > 0) != (v_none[i - 1] > 0))
            ++sign_changes;
    CHECK(sign_changes > 2);

    const auto v_asym = csv_column(spec.out_dir / "friction_expansion_only_ratio1p1.csv", "V");
    double vmax = 0.0;
    for (double v : v_asym)
        vmax = std::max(vmax, std::abs(v));
    int neg_to_pos = 0;
    int state = 0;
    for (double v : v_asym) {
        if (v < -1e-9 * vmax)
            state = -1;
        else if (v > 1e-9 * vmax) {
            if (state == -1)
                ++neg_to_pos;
            state = 1;
        }
    }
    CHECK(neg_to_pos == 1);
}

TEST_CASE("underdamped walls oscillate around the equilibrium length", "[harness][slow]") {
    ScenarioSpec spec;
    spec.name = "gamma_regimes";
    spec.base.params.total_time = 2.0;
    spec.out_dir = fresh_dir("gamma");
    run_scenario(spec);

    auto crossings = [&](const std::string& file) {
        const auto length = csv_column(spec.out_dir / file, "L");
        const double final_length = length.back();
        int count = 0;
        for (size_t i = 1; i < length.size(); ++i)
            if ((length[i] > final_length) != (length[i - 1] > final_length))
                ++count;
        return count;
    };
    CHECK(crossings("gamma_regime0p1.csv") > 2); // underdamped
    CHECK(crossings("gamma_regime10.csv") <= 1); // overdamped
}

TEST_CASE("pressure sweep brackets the rest length", "[harness][slow]") {
    RunConfig base;
    base.initial = {InitialStateSpec::Kind::thermal, 1};
    base.params.total_time = 1.0;
    const auto points = equilibrium_sweep_points(base, 0.9, 1.1, 3);
    REQUIRE(points.size() == 3);
    CHECK(points[0].final_length > 1.0);  // expansion
    CHECK(points[2].final_length < 1.0);  // weak compression
    CHECK(points[2].min_length < points[2].final_length);
    CHECK_THAT(points[1].ratio, WithinAbs(1.0, 1e-12));
}

TEST_CASE("convergence report sees fourth-order decay and determinism", "[harness][slow]") {
    RunConfig base;
    base.initial = {InitialStateSpec::Kind::thermal, 1};
    base.params.truncation = 6;
    base.params.time_step = 4e-4;
    base.params.total_time = 0.1;
    base.pressure_ratio = 0.9;
    const ConvergenceReport report = convergence_report(base);
    CHECK(report.deterministic);
    CHECK(report.order_estimate > 3.0);
    CHECK(report.order_estimate < 5.2);
    CHECK(report.k_dev_length < 1e-3);
    CHECK(report.k_dev_jarzynski < 1e-3);

    const auto dir = fresh_dir("convergence");
    const auto path = write_convergence_report(dir, base, report);
    const std::string text = slurp(path);
    CHECK(text.find("order_estimate") != std::string::npos);
}

TEST_CASE("fidelity scenario emits both ground-state references", "[harness][slow]") {
    ScenarioSpec spec;
    spec.name = "fidelity_check";
    spec.base.params.total_time = 0.5;
    spec.out_dir = fresh_dir("fidelity");
    run_scenario(spec);
    const auto fid = csv_column(spec.out_dir / "fidelity_mass0p001.csv", "fidelity_ground");
    const auto fid_h =
        csv_column(spec.out_dir / "fidelity_mass0p001.csv", "fidelity_ground_hstar");
    REQUIRE(!fid.empty());
    REQUIRE(fid.size() == fid_h.size());
    CHECK(fid.front() == 1.0);
    for (double f : fid)
        CHECK(f > 0.9);
}
