#pragma once

// Ensemble persistence. The JSON sidecar is the authoritative record: it holds
// dt, sizes, per-trace seeds, the simulation parameters and the experiment
// config snapshot. Sample data goes either to a CSV (t_s, z_m_trace0, ...) or
// to a little-endian float64 row-major binary file (one row per trace).

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "levsq/errors.hpp"
#include "levsq/io/config.hpp"
#include "levsq/langevin.hpp"

namespace levsq::io {

namespace fs = std::filesystem;

inline nlohmann::json schedule_to_json(const PulseSchedule& s) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& seg : s.segments)
        segs.push_back({{"kind", seg.kind == SegmentKind::pulse ? "pulse" : "gap"}, {"duration_s", seg.duration}});
    return {{"omega1_rad_s", s.trap.omega1}, {"omega2_rad_s", s.trap.omega2}, {"segments", segs}};
}

inline PulseSchedule schedule_from_json(const nlohmann::json& j) {
    PulseSchedule s;
    s.trap = {j.at("omega1_rad_s").get<double>(), j.at("omega2_rad_s").get<double>()};
    for (const auto& seg : j.at("segments"))
        s.segments.push_back({seg.at("kind").get<std::string>() == "pulse" ? SegmentKind::pulse : SegmentKind::gap,
                              seg.at("duration_s").get<double>()});
    return s;
}

inline nlohmann::json params_to_json(const SimulationParams& p) {
    nlohmann::json j{{"radius_m", p.particle.radius},
                     {"mass_kg", p.particle.mass},
                     {"temperature_k", p.temperature},
                     {"gamma_rad_s", p.gamma},
                     {"pre_pulse_s", p.pre_pulse},
                     {"jitter_std_rad", p.jitter_std},
                     {"pulse_offset_z_m", p.pulse_offset_z},
                     {"noise_floor_m_per_rthz", p.noise_floor},
                     {"max_steps", p.max_steps}};
    if (p.particle.density) j["density_kg_m3"] = *p.particle.density;
    return j;
}

inline SimulationParams params_from_json(const nlohmann::json& j) {
    SimulationParams p;
    p.particle.radius = j.at("radius_m").get<double>();
    p.particle.mass = j.at("mass_kg").get<double>();
    if (j.contains("density_kg_m3")) p.particle.density = j.at("density_kg_m3").get<double>();
    p.temperature = j.at("temperature_k").get<double>();
    p.gamma = j.at("gamma_rad_s").get<double>();
    p.pre_pulse = j.at("pre_pulse_s").get<double>();
    p.jitter_std = j.at("jitter_std_rad").get<double>();
    p.pulse_offset_z = j.at("pulse_offset_z_m").get<double>();
    p.noise_floor = j.at("noise_floor_m_per_rthz").get<double>();
    p.max_steps = j.at("max_steps").get<std::uint64_t>();
    return p;
}

namespace detail {

inline std::string format_sample(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

inline void write_le_doubles(std::ostream& out, const std::vector<double>& data) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    } else {
        for (double v : data) {
            auto bits = std::bit_cast<std::uint64_t>(v);
            char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
            out.write(b, 8);
        }
    }
}

inline void read_le_doubles(std::istream& in, std::vector<double>& data) {
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if constexpr (std::endian::native != std::endian::little) {
        for (double& v : data) {
            auto bits = std::bit_cast<std::uint64_t>(v);
            std::uint64_t swapped = 0;
            for (int i = 0; i < 8; ++i) swapped |= ((bits >> (8 * i)) & 0xff) << (8 * (7 - i));
            v = std::bit_cast<double>(swapped);
        }
    }
}

} // namespace detail

// Writes <dir>/<stem>.json plus <stem>.bin or <stem>.csv; returns the sidecar path.
inline fs::path write_ensemble(const TrajectoryEnsemble& ens, const fs::path& dir, const std::string& stem,
                               const std::string& format, const nlohmann::json& config_snapshot) {
    fs::create_directories(dir);
    const bool csv = format == "csv";
    if (!csv && format != "binary") throw ConfigError("ensemble format must be csv or binary");
    const fs::path data_path = dir / (stem + (csv ? ".csv" : ".bin"));
    std::ofstream out(data_path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + data_path.string());
    if (csv) {
        out << "t_s";
        for (std::size_t i = 0; i < ens.n_traces(); ++i) out << ",z_m_trace" << i;
        out << '\n';
        for (std::size_t k = 0; k < ens.n_samples; ++k) {
            out << detail::format_sample(ens.time(k));
            for (std::size_t i = 0; i < ens.n_traces(); ++i) out << ',' << detail::format_sample(ens.data[i * ens.n_samples + k]);
            out << '\n';
        }
    } else {
        detail::write_le_doubles(out, ens.data);
    }
    out.close();

    nlohmann::json side{{"format", csv ? "csv" : "binary-f64le-row-major"},
                        {"data_file", data_path.filename().string()},
                        {"dt_s", ens.dt},
                        {"t_start_s", ens.t_start},
                        {"n_traces", ens.n_traces()},
                        {"n_samples", ens.n_samples},
                        {"master_seed", ens.master_seed},
                        {"seeds", ens.seeds},
                        {"valid_begin", ens.valid_begin},
                        {"valid_end", ens.valid_end},
                        {"params", params_to_json(ens.params)},
                        {"schedule", schedule_to_json(ens.schedule)},
                        {"config", config_snapshot}};
    const fs::path side_path = dir / (stem + ".json");
    std::ofstream js(side_path);
    js << side.dump(2) << '\n';
    return side_path;
}

struct LoadedEnsemble {
    TrajectoryEnsemble ensemble;
    nlohmann::json config; // embedded snapshot
};

inline LoadedEnsemble read_ensemble(const fs::path& sidecar) {
    std::ifstream in(sidecar);
    if (!in) throw ConfigError("cannot open ensemble sidecar " + sidecar.string());
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("ensemble sidecar " + sidecar.string() + ": " + e.what());
    }
    LoadedEnsemble out;
    TrajectoryEnsemble& ens = out.ensemble;
    try {
        ens.dt = side.at("dt_s").get<double>();
        ens.t_start = side.at("t_start_s").get<double>();
        ens.n_samples = side.at("n_samples").get<std::size_t>();
        ens.master_seed = side.at("master_seed").get<std::uint64_t>();
        ens.seeds = side.at("seeds").get<std::vector<std::uint64_t>>();
        ens.valid_begin = side.at("valid_begin").get<std::size_t>();
        ens.valid_end = side.at("valid_end").get<std::size_t>();
        ens.params = params_from_json(side.at("params"));
        ens.schedule = schedule_from_json(side.at("schedule"));
        out.config = side.value("config", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("ensemble sidecar " + sidecar.string() + ": " + e.what());
    }
    const std::size_t n_traces = side.at("n_traces").get<std::size_t>();
    if (ens.seeds.size() != n_traces) throw ConfigError("ensemble sidecar: seeds count != n_traces");
    ens.data.assign(n_traces * ens.n_samples, 0.0);

    const fs::path data_path = sidecar.parent_path() / side.at("data_file").get<std::string>();
    std::ifstream din(data_path, std::ios::binary);
    if (!din) throw ConfigError("cannot open ensemble data " + data_path.string());
    if (side.at("format").get<std::string>() == "csv") {
        std::string line;
        std::getline(din, line); // header
        for (std::size_t k = 0; k < ens.n_samples; ++k) {
            if (!std::getline(din, line)) throw ConfigError("ensemble CSV truncated at row " + std::to_string(k));
            std::stringstream row(line);
            std::string cell;
            std::getline(row, cell, ','); // t_s
            for (std::size_t i = 0; i < n_traces; ++i) {
                if (!std::getline(row, cell, ',')) throw ConfigError("ensemble CSV: missing column in row " + std::to_string(k));
                ens.data[i * ens.n_samples + k] = levsq::io::detail::parse_double("z_m", cell);
            }
        }
    } else {
        detail::read_le_doubles(din, ens.data);
        if (!din) throw ConfigError("ensemble binary file truncated: " + data_path.string());
    }
    return out;
}

} // namespace levsq::io
