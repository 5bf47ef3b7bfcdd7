#pragma once

// CSV and metadata emission. Every CSV carries '#'-prefixed metadata lines
// (scenario, figure label, full parameter set) before the header row; values
// are printed with 12 significant digits so identical runs produce identical
// bytes. Each CSV gets a JSON sidecar with the full parameter record.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qpiston/dynamics.hpp"
#include "qpiston/errors.hpp"
#include "qpiston/state.hpp"
#include "qpiston/thermo.hpp"

namespace qpiston {

inline std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline nlohmann::json params_to_json(const SimParams& p) {
    return nlohmann::json{{"particle_mass", p.particle_mass},
                          {"wall_mass", p.wall_mass},
                          {"wall_section", p.wall_section},
                          {"gamma", p.gamma},
                          {"friction_mode", to_string(p.friction_mode)},
                          {"external_pressure", p.external_pressure},
                          {"dephasing_rate", p.dephasing_rate},
                          {"beta", p.beta},
                          {"truncation", p.truncation},
                          {"time_step", p.time_step},
                          {"total_time", p.total_time},
                          {"sample_stride", p.sample_stride}};
}

// Table writer: metadata lines, a header row, then rows of 12-significant-
// digit values.
class CsvWriter {
  public:
    explicit CsvWriter(const std::filesystem::path& path) : out_(path) {
        if (!out_)
            throw IoError("cannot open " + path.string() + " for writing");
    }

    void metadata(const std::string& key, const std::string& value) {
        out_ << "# " << key << ": " << value << '\n';
    }

    void header(const std::vector<std::string>& columns) {
        for (size_t i = 0; i < columns.size(); ++i)
            out_ << (i ? "," : "") << columns[i];
        out_ << '\n';
    }

    void row(const std::vector<double>& values) {
        for (size_t i = 0; i < values.size(); ++i)
            out_ << (i ? "," : "") << format_value(values[i]);
        out_ << '\n';
    }

  private:
    std::ofstream out_;
};

struct CsvMetadata {
    std::string scenario;
    std::string figure; // which published figure this output reproduces
    std::map<std::string, std::string> notes;
};

inline void write_metadata_lines(CsvWriter& csv, const CsvMetadata& meta,
                                 const SimParams& params) {
    if (!meta.scenario.empty())
        csv.metadata("scenario", meta.scenario);
    if (!meta.figure.empty())
        csv.metadata("figure", meta.figure);
    csv.metadata("params", params_to_json(params).dump());
    for (const auto& [key, value] : meta.notes)
        csv.metadata(key, value);
}

// Trajectory CSV: t, L, V, U, P, W_fric, purity, pop_1..pop_K, plus the
// energy-bookkeeping residual as a trailing diagnostic column.
inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                                 const CsvMetadata& meta = {}) {
    CsvWriter csv(path);
    write_metadata_lines(csv, meta, traj.params);
    csv.metadata("mode", traj.mode);
    std::vector<std::string> columns{"t", "L", "V", "U", "P", "W_fric", "purity"};
    for (int n = 1; n <= traj.params.truncation; ++n)
        columns.push_back("pop_" + std::to_string(n));
    columns.push_back("energy_residual");
    csv.header(columns);
    std::vector<double> row;
    row.reserve(columns.size());
    for (const auto& s : traj.samples) {
        row.clear();
        row.insert(row.end(),
                   {s.time, s.length, s.velocity, s.energy, s.pressure, s.friction_work,
                    s.purity});
        for (int n = 0; n < traj.params.truncation; ++n)
            row.push_back(s.populations(n));
        row.push_back(s.energy_residual);
        csv.row(row);
    }
}

inline void write_sidecar_metadata(const std::filesystem::path& csv_path,
                                   const SimParams& params, const CsvMetadata& meta = {},
                                   const nlohmann::json& extra = {}) {
    nlohmann::json doc;
    doc["params"] = params_to_json(params);
    if (!meta.scenario.empty())
        doc["scenario"] = meta.scenario;
    if (!meta.figure.empty())
        doc["figure"] = meta.figure;
    for (const auto& [key, value] : meta.notes)
        doc["notes"][key] = value;
    if (!extra.is_null())
        doc["extra"] = extra;
    std::filesystem::path side = csv_path;
    side += ".meta.json";
    std::ofstream out(side);
    if (!out)
        throw IoError("cannot open " + side.string() + " for writing");
    out << doc.dump(2) << '\n';
}

// (w, prob) record of a work distribution at one time.
inline void write_work_distribution_csv(const std::filesystem::path& path,
                                        const WorkDistribution& dist,
                                        const SimParams& params, const CsvMetadata& meta = {}) {
    CsvWriter csv(path);
    write_metadata_lines(csv, meta, params);
    csv.metadata("time", format_value(dist.time));
    csv.header({"w", "prob"});
    for (const auto& o : dist.outcomes)
        csv.row({o.work, o.probability});
}

inline void save_state(const std::filesystem::path& path, const PureState& state) {
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    write_state(out, state);
}

inline void save_state(const std::filesystem::path& path, const MixedState& state) {
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    write_state(out, state);
}

inline PureState load_pure_state(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    return read_pure_state(in);
}

inline MixedState load_mixed_state(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    return read_mixed_state(in);
}

} // namespace qpiston
