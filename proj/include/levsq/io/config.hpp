#pragma once

// Experiment configuration: flat `key = value` text with units in the key
// names (JSON objects with the same keys are accepted too). Every field has a
// documented default; the loaded object is fully populated and can be written
// back out as a complete snapshot.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "levsq/constants.hpp"
#include "levsq/errors.hpp"
#include "levsq/filter.hpp"
#include "levsq/gaussian_model.hpp"
#include "levsq/langevin.hpp"
#include "levsq/phase_space.hpp"
#include "levsq/squeeze_core.hpp"

namespace levsq::io {

struct ExperimentConfig {
    ParticleParams particle{32e-9, 3.1e-19, std::nullopt};
    GasEnvironment gas{10.0, 300.0, constants::air_molecule_mass};

    double omega1 = constants::two_pi * 112e3;
    double omega2 = constants::two_pi * 49.3e3;
    // optics route: used when both powers are set and no frequency was given
    std::optional<double> polarizability;
    std::optional<double> waist;
    std::optional<double> power1;
    std::optional<double> power2;

    std::optional<double> gamma; // rad/s; unset = gas_damping(particle, gas)

    // "pulse:<s>|pulse:optimal|gap:<s>", comma separated
    std::string schedule = "pulse:optimal";
    double pre_pulse = 0.5e-3;
    double duration = 20e-3;
    double dt = 0.5e-6;
    std::size_t n_traces = 2000;
    std::uint64_t seed = 1;
    std::uint64_t max_steps = 4'000'000'000ULL;
    unsigned threads = 0;
    std::string ensemble_format = "binary";

    double jitter_std = 0.0; // rad; eta = exp(-2 std^2)
    double noise_floor = 0.0; // m/sqrt(Hz)
    double pulse_offset_z = 0.0; // m

    AnalysisSettings analysis{};
    std::size_t psd_segment_length = 131072;
    double psd_overlap = 0.5;
    double psd_trace_duration = 2.0;

    std::optional<double> fit_omega2_init; // unset = omega2
    double fit_eta_init = 0.9;
    bool fit_multistart = true;

    std::size_t fig4a_n_taus = 12;
    std::optional<double> fig4a_tau_max; // unset = pi / omega2
    double fig4a_duration = 0.8e-3;

    TrapPair trap() const { return {omega1, omega2}; }
    double resolved_gamma() const { return gamma ? *gamma : gas_damping(particle, gas); }
    double resolved_fit_omega2_init() const { return fit_omega2_init ? *fit_omega2_init : omega2; }
    double resolved_tau_max() const { return fig4a_tau_max ? *fig4a_tau_max : constants::pi / omega2; }
    double eta() const { return std::exp(-2.0 * jitter_std * jitter_std); }

    PulseSchedule pulse_schedule() const;
    SimulationParams simulation_params() const;
    void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
        throw ConfigError("field '" + key + "': expected a number, got '" + t + "'");
    return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size())
        throw ConfigError("field '" + key + "': expected a non-negative integer, got '" + t + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw ConfigError("field '" + key + "': expected true/false, got '" + t + "'");
}

inline std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

struct Field {
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    // empty optional = unset (omitted from snapshots)
    std::function<std::optional<std::string>(const ExperimentConfig&)> get;
};

template <class T>
Field number_field(std::string key, T ExperimentConfig::*member) {
    return {key,
            [member, key](ExperimentConfig& c, const std::string& v) {
                if constexpr (std::is_floating_point_v<T>) c.*member = parse_double(key, v);
                else c.*member = static_cast<T>(parse_uint(key, v));
            },
            [member](const ExperimentConfig& c) -> std::optional<std::string> {
                if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
                else return std::to_string(c.*member);
            }};
}

inline Field optional_field(std::string key, std::optional<double> ExperimentConfig::*member) {
    return {key, [member, key](ExperimentConfig& c, const std::string& v) { c.*member = parse_double(key, v); },
            [member](const ExperimentConfig& c) -> std::optional<std::string> {
                if (!(c.*member)) return std::nullopt;
                return format_double(*(c.*member));
            }};
}

// Alias in Hz for a rad/s field; only used for input.
inline Field hz_alias(std::string key, std::function<void(ExperimentConfig&, double)> assign) {
    return {key, [assign, key](ExperimentConfig& c, const std::string& v) { assign(c, constants::two_pi * parse_double(key, v)); },
            [](const ExperimentConfig&) -> std::optional<std::string> { return std::nullopt; }};
}

inline Field sub_field(std::string key, std::function<double&(ExperimentConfig&)> ref) {
    return {key, [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_double(key, v); },
            [ref](const ExperimentConfig& c) -> std::optional<std::string> {
                return format_double(ref(const_cast<ExperimentConfig&>(c)));
            }};
}

inline const std::vector<Field>& fields() {
    using C = ExperimentConfig;
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(sub_field("radius_m", [](C& c) -> double& { return c.particle.radius; }));
        f.push_back(sub_field("mass_kg", [](C& c) -> double& { return c.particle.mass; }));
        f.push_back({"density_kg_m3",
                     [](C& c, const std::string& v) { c.particle.density = parse_double("density_kg_m3", v); },
                     [](const C& c) -> std::optional<std::string> {
                         if (!c.particle.density) return std::nullopt;
                         return format_double(*c.particle.density);
                     }});
        f.push_back(sub_field("pressure_pa", [](C& c) -> double& { return c.gas.pressure; }));
        f.push_back({"pressure_mbar",
                     [](C& c, const std::string& v) { c.gas.pressure = 100.0 * parse_double("pressure_mbar", v); },
                     [](const C&) -> std::optional<std::string> { return std::nullopt; }});
        f.push_back(sub_field("temperature_k", [](C& c) -> double& { return c.gas.temperature; }));
        f.push_back(sub_field("gas_molecule_mass_kg", [](C& c) -> double& { return c.gas.molecule_mass; }));
        f.push_back(number_field("omega1_rad_s", &C::omega1));
        f.push_back(number_field("omega2_rad_s", &C::omega2));
        f.push_back(hz_alias("f1_hz", [](C& c, double w) { c.omega1 = w; }));
        f.push_back(hz_alias("f2_hz", [](C& c, double w) { c.omega2 = w; }));
        f.push_back(optional_field("polarizability_c_m2_per_v", &C::polarizability));
        f.push_back(optional_field("waist_m", &C::waist));
        f.push_back(optional_field("power1_w", &C::power1));
        f.push_back(optional_field("power2_w", &C::power2));
        f.push_back(optional_field("gamma_rad_s", &C::gamma));
        f.push_back(hz_alias("gamma_hz", [](C& c, double w) { c.gamma = w; }));
        f.push_back({"schedule", [](C& c, const std::string& v) { c.schedule = trim(v); },
                     [](const C& c) -> std::optional<std::string> { return c.schedule; }});
        f.push_back(number_field("pre_pulse_s", &C::pre_pulse));
        f.push_back(number_field("duration_s", &C::duration));
        f.push_back(number_field("dt_s", &C::dt));
        f.push_back(number_field("n_traces", &C::n_traces));
        f.push_back(number_field("seed", &C::seed));
        f.push_back(number_field("max_steps", &C::max_steps));
        f.push_back(number_field("threads", &C::threads));
        f.push_back({"ensemble_format", [](C& c, const std::string& v) { c.ensemble_format = trim(v); },
                     [](const C& c) -> std::optional<std::string> { return c.ensemble_format; }});
        f.push_back(number_field("jitter_std_rad", &C::jitter_std));
        f.push_back({"eta",
                     [](C& c, const std::string& v) {
                         const double eta = parse_double("eta", v);
                         if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("field 'eta': must lie in (0, 1]");
                         c.jitter_std = std::sqrt(-std::log(eta) / 2.0);
                     },
                     [](const C&) -> std::optional<std::string> { return std::nullopt; }});
        f.push_back(number_field("noise_floor_m_per_rthz", &C::noise_floor));
        f.push_back(number_field("pulse_offset_z_m", &C::pulse_offset_z));
        f.push_back(sub_field("filter_center_rad_s", [](C& c) -> double& { return c.analysis.filter_center; }));
        f.push_back(sub_field("filter_halfwidth_rad_s", [](C& c) -> double& { return c.analysis.filter_halfwidth; }));
        f.push_back(hz_alias("filter_halfwidth_hz", [](C& c, double w) { c.analysis.filter_halfwidth = w; }));
        f.push_back(sub_field("t0_offset_s", [](C& c) -> double& { return c.analysis.t0_offset; }));
        f.push_back(sub_field("relaxation_gamma_rad_s", [](C& c) -> double& { return c.analysis.relaxation_gamma; }));
        f.push_back(hz_alias("relaxation_gamma_hz", [](C& c, double w) { c.analysis.relaxation_gamma = w; }));
        f.push_back({"bootstrap_samples",
                     [](C& c, const std::string& v) { c.analysis.bootstrap = parse_uint("bootstrap_samples", v); },
                     [](const C& c) -> std::optional<std::string> { return std::to_string(c.analysis.bootstrap); }});
        f.push_back({"bootstrap_seed",
                     [](C& c, const std::string& v) { c.analysis.bootstrap_seed = parse_uint("bootstrap_seed", v); },
                     [](const C& c) -> std::optional<std::string> { return std::to_string(c.analysis.bootstrap_seed); }});
        f.push_back(number_field("psd_segment_length", &C::psd_segment_length));
        f.push_back(number_field("psd_overlap", &C::psd_overlap));
        f.push_back(number_field("psd_trace_duration_s", &C::psd_trace_duration));
        f.push_back(optional_field("fit_omega2_init_rad_s", &C::fit_omega2_init));
        f.push_back(hz_alias("fit_f2_init_hz", [](C& c, double w) { c.fit_omega2_init = w; }));
        f.push_back(number_field("fit_eta_init", &C::fit_eta_init));
        f.push_back({"fit_multistart",
                     [](C& c, const std::string& v) { c.fit_multistart = parse_bool("fit_multistart", v); },
                     [](const C& c) -> std::optional<std::string> { return c.fit_multistart ? "true" : "false"; }});
        f.push_back(number_field("fig4a_n_taus", &C::fig4a_n_taus));
        f.push_back(optional_field("fig4a_tau_max_s", &C::fig4a_tau_max));
        f.push_back(number_field("fig4a_duration_s", &C::fig4a_duration));
        return f;
    }();
    return table;
}

inline const Field* find_field(const std::string& key) {
    for (const auto& f : fields())
        if (f.key == key) return &f;
    return nullptr;
}

} // namespace detail

inline PulseSchedule ExperimentConfig::pulse_schedule() const {
    PulseSchedule s;
    s.trap = trap();
    std::stringstream in(schedule);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = detail::trim(item);
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("schedule entry '" + item + "': expected kind:duration");
        const std::string kind = detail::trim(item.substr(0, colon));
        const std::string value = detail::trim(item.substr(colon + 1));
        Segment seg;
        if (kind == "pulse") seg.kind = SegmentKind::pulse;
        else if (kind == "gap") seg.kind = SegmentKind::gap;
        else throw ConfigError("schedule entry '" + item + "': kind must be pulse or gap");
        if (value == "optimal") {
            if (seg.kind != SegmentKind::pulse) throw ConfigError("schedule: 'optimal' applies to pulses only");
            seg.duration = constants::pi / (2.0 * omega2);
        } else {
            seg.duration = detail::parse_double("schedule", value);
        }
        if (!(seg.duration >= 0.0)) throw ConfigError("schedule: durations must be >= 0");
        s.segments.push_back(seg);
    }
    if (s.segments.empty()) throw ConfigError("schedule: no segments");
    return s;
}

inline SimulationParams ExperimentConfig::simulation_params() const {
    SimulationParams p;
    p.particle = particle;
    p.temperature = gas.temperature;
    p.gamma = resolved_gamma();
    p.pre_pulse = pre_pulse;
    p.jitter_std = jitter_std;
    p.pulse_offset_z = pulse_offset_z;
    p.noise_floor = noise_floor;
    p.max_steps = max_steps;
    return p;
}

inline void ExperimentConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
    try {
        particle.validate();
        gas.validate();
    } catch (const DomainError& e) {
        fail(e.what());
    }
    if (!(omega1 > 0.0) || !(omega2 > 0.0)) fail("omega1_rad_s and omega2_rad_s must be positive");
    if (!(dt > 0.0)) fail("dt_s must be positive");
    const double nyquist = constants::pi / dt;
    if (omega1 >= nyquist) fail("omega1 exceeds the Nyquist frequency of dt_s");
    if (omega2 >= nyquist) fail("omega2 exceeds the Nyquist frequency of dt_s");
    if (n_traces < 1) fail("n_traces must be >= 1");
    if (!(duration > 0.0)) fail("duration_s must be positive");
    if (!(pre_pulse >= 0.0)) fail("pre_pulse_s must be >= 0");
    if (gamma && !(*gamma >= 0.0)) fail("gamma_rad_s must be >= 0");
    if (!(jitter_std >= 0.0)) fail("jitter_std_rad must be >= 0 (eta in [0, 1])");
    if (!(noise_floor >= 0.0)) fail("noise_floor_m_per_rthz must be >= 0");
    if (ensemble_format != "binary" && ensemble_format != "csv") fail("ensemble_format must be binary or csv");
    const PulseSchedule sched = pulse_schedule();
    if (pre_pulse + sched.total_duration() > duration) fail("schedule (plus pre_pulse_s) does not fit in duration_s");
    const double center = analysis.filter_center > 0.0 ? analysis.filter_center : omega1;
    if (!(analysis.filter_halfwidth > 0.0) || center - analysis.filter_halfwidth <= 0.0
        || center + analysis.filter_halfwidth >= nyquist)
        fail("filter band must lie inside (0, Nyquist)");
    if (!(analysis.relaxation_gamma >= 0.0)) fail("relaxation_gamma_rad_s must be >= 0");
    if (!(psd_overlap >= 0.0 && psd_overlap < 1.0)) fail("psd_overlap must be in [0, 1)");
    if (psd_segment_length < 8) fail("psd_segment_length must be >= 8");
    if (!(fit_eta_init > 0.0 && fit_eta_init < 1.0)) fail("fit_eta_init must be in (0, 1)");
    if (fig4a_n_taus < 4) fail("fig4a_n_taus must be >= 4");
}

// Applies one key; unknown keys are errors.
inline void set_field(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const detail::Field* f = detail::find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    f->set(cfg, value);
}

inline void resolve_optics(ExperimentConfig& cfg, bool omega1_given, bool omega2_given) {
    if (!(cfg.power1 || cfg.power2)) return;
    if (!cfg.polarizability || !cfg.waist) throw ConfigError("optics route needs polarizability_c_m2_per_v and waist_m");
    try {
        if (cfg.power1 && !omega1_given)
            cfg.omega1 = trap_frequency({*cfg.power1, *cfg.polarizability, *cfg.waist}, cfg.particle.mass);
        if (cfg.power2 && !omega2_given)
            cfg.omega2 = trap_frequency({*cfg.power2, *cfg.polarizability, *cfg.waist}, cfg.particle.mass);
    } catch (const DomainError& e) {
        throw ConfigError(std::string("optics: ") + e.what());
    }
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>") {
    ExperimentConfig cfg;
    bool w1 = false, w2 = false;
    auto note_key = [&](const std::string& k) {
        if (k == "omega1_rad_s" || k == "f1_hz") w1 = true;
        if (k == "omega2_rad_s" || k == "f2_hz") w2 = true;
    };
    const std::string t = detail::trim(text);
    if (!t.empty() && t.front() == '{') {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(t);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(origin + ": JSON parse error: " + e.what());
        }
        for (const auto& [k, v] : j.items()) {
            std::string value;
            if (v.is_string()) value = v.get<std::string>();
            else if (v.is_boolean()) value = v.get<bool>() ? "true" : "false";
            else if (v.is_number_unsigned()) value = std::to_string(v.get<std::uint64_t>());
            else if (v.is_number()) value = detail::format_double(v.get<double>());
            else throw ConfigError(origin + ": field '" + k + "' must be a scalar");
            try {
                set_field(cfg, k, value);
            } catch (const ConfigError& e) {
                throw ConfigError(origin + ": " + e.what());
            }
            note_key(k);
        }
    } else {
        std::stringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            const std::string key = detail::trim(line.substr(0, eq));
            try {
                set_field(cfg, key, line.substr(eq + 1));
            } catch (const ConfigError& e) {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
            }
            note_key(key);
        }
    }
    resolve_optics(cfg, w1, w2);
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

// Every set field, in table order; the gamma default is made explicit.
inline std::vector<std::pair<std::string, std::string>> config_snapshot(const ExperimentConfig& cfg) {
    ExperimentConfig full = cfg;
    full.gamma = cfg.resolved_gamma();
    full.fit_omega2_init = cfg.resolved_fit_omega2_init();
    full.fig4a_tau_max = cfg.resolved_tau_max();
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : detail::fields())
        if (auto v = f.get(full)) out.emplace_back(f.key, *v);
    return out;
}

inline std::string config_to_text(const ExperimentConfig& cfg) {
    std::string s;
    for (const auto& [k, v] : config_snapshot(cfg)) s += k + " = " + v + "\n";
    return s;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : config_snapshot(cfg)) j[k] = v;
    return j;
}

// Inverse of config_to_json (values stored as strings).
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    bool w1 = false, w2 = false;
    for (const auto& [k, v] : j.items()) {
        set_field(cfg, k, v.is_string() ? v.get<std::string>() : v.dump());
        if (k == "omega1_rad_s") w1 = true;
        if (k == "omega2_rad_s") w2 = true;
    }
    resolve_optics(cfg, w1, w2);
    cfg.validate();
    return cfg;
}

} // namespace levsq::io
