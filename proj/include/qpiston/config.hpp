#pragma once

// JSON run configuration. An empty (or whitespace-only) file means "all
// defaults"; unknown keys are errors; constraint violations name the key.
// External pressure is usually given as `pressure_ratio`, the ratio
// P0 / P(0) to the initial state's pressure, and resolved once the initial
// state is known.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>

#include <json.hpp>

#include "qpiston/dynamics.hpp"
#include "qpiston/errors.hpp"
#include "qpiston/state.hpp"

namespace qpiston {

struct InitialStateSpec {
    enum class Kind { ground, eigenstate, thermal };
    Kind kind = Kind::ground;
    int level = 1; // for Kind::eigenstate

    std::string name() const {
        switch (kind) {
        case Kind::ground: return "ground";
        case Kind::eigenstate: return "eigenstate_" + std::to_string(level);
        case Kind::thermal: return "thermal";
        }
        return "?";
    }
};

struct RunConfig {
    SimParams params;
    // exactly one of the two pressure specifications is active
    std::optional<double> pressure_ratio = 1.1; // P0 / P(0)
    std::optional<double> external_pressure;    // absolute P0
    InitialStateSpec initial;
    std::optional<std::string> scenario;
};

using InitialState = std::variant<PureState, MixedState>;

inline InitialState make_initial_state(const RunConfig& config) {
    const int levels = config.params.truncation;
    switch (config.initial.kind) {
    case InitialStateSpec::Kind::ground:
        return PureState::ground(levels);
    case InitialStateSpec::Kind::eigenstate:
        return PureState::eigenstate(levels, config.initial.level);
    case InitialStateSpec::Kind::thermal:
        return thermal_state(config.params.beta, 1.0, levels, config.params.particle_mass)
            .state;
    }
    throw ConfigError("unknown initial state kind");
}

inline double initial_pressure(const InitialState& state, const SimParams& params) {
    return std::visit([&](const auto& s) { return pressure(s, 1.0, params); }, state);
}

// Fill params.external_pressure from the ratio (if configured that way) and
// return the initial state the ratio was resolved against.
inline InitialState resolve_pressure(RunConfig& config) {
    config.params.validate();
    InitialState state = make_initial_state(config);
    if (config.external_pressure && config.pressure_ratio)
        throw ConfigError("config: give either external_pressure or pressure_ratio, not both");
    if (config.external_pressure) {
        config.params.external_pressure = *config.external_pressure;
    } else {
        const double ratio = config.pressure_ratio.value_or(1.1);
        if (!(ratio >= 0.0))
            throw ConfigError("pressure_ratio must be non-negative, got " +
                              std::to_string(ratio));
        config.params.external_pressure = ratio * initial_pressure(state, config.params);
    }
    config.params.validate();
    return state;
}

namespace detail {

template <class T>
T take_number(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key))
        return fallback;
    const auto& v = j.at(key);
    if constexpr (std::is_same_v<T, int>) {
        if (!v.is_number_integer())
            throw ConfigError("config key '" + key + "' must be an integer");
    } else {
        if (!v.is_number())
            throw ConfigError("config key '" + key + "' must be a number");
    }
    return v.get<T>();
}

} // namespace detail

inline RunConfig parse_config(const std::string& text) {
    RunConfig config;
    std::string trimmed = text;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
    if (trimmed.empty())
        return config; // empty file: full defaults

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    }
    if (!j.is_object())
        throw ConfigError("config must be a JSON object of key/value settings");

    static const std::set<std::string> known{
        "particle_mass", "wall_mass",    "wall_section",   "gamma",
        "friction_mode", "pressure_ratio", "external_pressure", "dephasing_rate",
        "beta",          "truncation",   "time_step",      "total_time",
        "sample_stride", "auto_refine_dt", "record_states", "initial_state",
        "initial_level", "scenario"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("config: unknown key '" + it.key() + "'");

    SimParams& p = config.params;
    p.particle_mass = detail::take_number(j, "particle_mass", p.particle_mass);
    p.wall_mass = detail::take_number(j, "wall_mass", p.wall_mass);
    p.wall_section = detail::take_number(j, "wall_section", p.wall_section);
    p.gamma = detail::take_number(j, "gamma", p.gamma);
    p.dephasing_rate = detail::take_number(j, "dephasing_rate", p.dephasing_rate);
    p.beta = detail::take_number(j, "beta", p.beta);
    p.truncation = detail::take_number(j, "truncation", p.truncation);
    p.time_step = detail::take_number(j, "time_step", p.time_step);
    p.total_time = detail::take_number(j, "total_time", p.total_time);
    p.sample_stride = detail::take_number(j, "sample_stride", p.sample_stride);
    if (j.contains("auto_refine_dt")) {
        if (!j["auto_refine_dt"].is_boolean())
            throw ConfigError("config key 'auto_refine_dt' must be a boolean");
        p.auto_refine_dt = j["auto_refine_dt"].get<bool>();
    }
    if (j.contains("record_states")) {
        if (!j["record_states"].is_boolean())
            throw ConfigError("config key 'record_states' must be a boolean");
        p.record_states = j["record_states"].get<bool>();
    }
    if (j.contains("friction_mode")) {
        if (!j["friction_mode"].is_string())
            throw ConfigError("config key 'friction_mode' must be a string");
        p.friction_mode = friction_mode_from_string(j["friction_mode"].get<std::string>());
    }

    if (j.contains("pressure_ratio") && j.contains("external_pressure"))
        throw ConfigError("config: give either external_pressure or pressure_ratio, not both");
    if (j.contains("external_pressure")) {
        config.external_pressure =
            detail::take_number(j, "external_pressure", 0.0);
        config.pressure_ratio.reset();
    } else if (j.contains("pressure_ratio")) {
        config.pressure_ratio = detail::take_number(j, "pressure_ratio", 1.1);
    }

    if (j.contains("initial_state")) {
        if (!j["initial_state"].is_string())
            throw ConfigError("config key 'initial_state' must be a string");
        const std::string kind = j["initial_state"].get<std::string>();
        if (kind == "ground")
            config.initial.kind = InitialStateSpec::Kind::ground;
        else if (kind == "eigenstate")
            config.initial.kind = InitialStateSpec::Kind::eigenstate;
        else if (kind == "thermal")
            config.initial.kind = InitialStateSpec::Kind::thermal;
        else
            throw ConfigError("config: initial_state '" + kind +
                              "' (expected ground | eigenstate | thermal)");
    }
    config.initial.level = detail::take_number(j, "initial_level", config.initial.level);
    if (config.initial.level < 1)
        throw ConfigError("initial_level must be at least 1, got " +
                          std::to_string(config.initial.level));
    if (j.contains("scenario")) {
        if (!j["scenario"].is_string())
            throw ConfigError("config key 'scenario' must be a string");
        config.scenario = j["scenario"].get<std::string>();
    }

    config.params.validate();
    return config;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open config file " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

} // namespace qpiston
