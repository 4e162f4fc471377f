#pragma once

// Command implementations shared by the CLI and the test suites. Each command
// writes its artifacts into an output directory plus a manifest.json holding
// the config snapshot, seeds, version and timings. Only the manifest carries
// wall-clock data, so the other artifacts are reproducible byte for byte.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "levsq/constants.hpp"
#include "levsq/ensemble_stats.hpp"
#include "levsq/errors.hpp"
#include "levsq/filter.hpp"
#include "levsq/io/config.hpp"
#include "levsq/io/ensemble_io.hpp"
#include "levsq/langevin.hpp"
#include "levsq/model_fit.hpp"
#include "levsq/phase_space.hpp"
#include "levsq/spectral.hpp"
#include "levsq/version.hpp"

namespace levsq::io {

// ---- small output helpers --------------------------------------------------

inline nlohmann::json covariance_json(const CovarianceState& s) {
    return {{"sigma", {s.sigma(0, 0), s.sigma(0, 1), s.sigma(1, 1)}},
            {"mean", {s.mean(0), s.mean(1)}},
            {"convention", "vacuum=1"}};
}

inline nlohmann::json matrix_json(const Eigen::Matrix2d& m) { return {m(0, 0), m(0, 1), m(1, 0), m(1, 1)}; }

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline void write_columns(const fs::path& path, const std::vector<std::string>& header,
                          const std::vector<std::vector<double>>& columns) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
    const std::size_t rows = columns.empty() ? 0 : columns.front().size();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << detail::format_sample(columns[c][r]);
        out << '\n';
    }
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;

    const std::vector<double>& column(const std::string& name) const {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return columns[c];
        throw ConfigError("CSV has no column '" + name + "'");
    }
    bool has(const std::string& name) const { return std::find(header.begin(), header.end(), name) != header.end(); }
};

inline Table read_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
    {
        std::stringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) t.header.push_back(detail::trim(cell));
    }
    t.columns.resize(t.header.size());
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::stringstream row(line);
        std::string cell;
        std::size_t c = 0;
        for (; std::getline(row, cell, ','); ++c) {
            if (c >= t.header.size()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": too many columns");
            try {
                t.columns[c].push_back(detail::parse_double(t.header[c], cell));
            } catch (const ConfigError& e) {
                throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
        if (c != t.header.size()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": missing columns");
    }
    return t;
}

// ---- stage runner ------------------------------------------------------------

// Runs named stages. On failure the files produced so far are moved to
// <out>/failed/ together with error.json, and the error is rethrown with the
// stage name prepended (same exit-code category).
class StageRunner {
public:
    StageRunner(fs::path out_dir, std::string command)
        : out_(std::move(out_dir)), command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
        fs::create_directories(out_);
    }

    const fs::path& out() const { return out_; }

    template <class F>
    auto run(const std::string& stage, F&& f) -> decltype(f()) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            if constexpr (std::is_void_v<decltype(f())>) {
                f();
                timings_[stage] = seconds_since(t0);
            } else {
                auto r = f();
                timings_[stage] = seconds_since(t0);
                return r;
            }
        } catch (const NumericalError& e) {
            quarantine(stage, e.what());
            throw NumericalError("stage '" + stage + "': " + e.what());
        } catch (const std::exception& e) {
            quarantine(stage, e.what());
            throw ConfigError("stage '" + stage + "': " + e.what());
        }
    }

    void finish(const ExperimentConfig* cfg, nlohmann::json seeds) const {
        nlohmann::json m{{"command", command_},
                         {"version", std::string(version)},
                         {"seeds", std::move(seeds)},
                         {"stage_seconds", timings_},
                         {"wall_time_s", seconds_since(start_)},
                         {"finished_at_utc", utc_now()}};
        if (cfg) m["config"] = config_to_json(*cfg);
        write_json(out_ / "manifest.json", m);
    }

private:
    static double seconds_since(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    static std::string utc_now() {
        const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    void quarantine(const std::string& stage, const std::string& message) const {
        std::error_code ec;
        const fs::path failed = out_ / "failed";
        fs::create_directories(failed, ec);
        std::vector<fs::path> produced;
        for (const auto& entry : fs::directory_iterator(out_, ec))
            if (entry.is_regular_file()) produced.push_back(entry.path());
        for (const auto& p : produced) fs::rename(p, failed / p.filename(), ec);
        std::ofstream(failed / "error.json") << nlohmann::json{{"command", command_}, {"stage", stage}, {"error", message}}.dump(2)
                                            << '\n';
    }

    fs::path out_;
    std::string command_;
    std::chrono::steady_clock::time_point start_;
    std::map<std::string, double> timings_;
};

// ---- ensemble analysis -------------------------------------------------------

struct EnsembleAnalysis {
    PulseSchedule schedule;
    std::size_t n_traces = 0;
    double dt = 0.0;
    std::vector<double> times;       // s, full trace
    std::vector<double> mean_raw;    // m
    std::vector<double> mean_filtered;
    std::vector<double> rms_raw;
    std::vector<double> rms_filtered;
    std::size_t valid_begin = 0, valid_end = 0;
    double settle_time = 0.0;

    PowerSpectrum mean_psd;
    double mean_peak_hz = 0.0;

    std::optional<EnvelopeFit> decay;
    std::optional<SqueezingMeasurement> squeezing;
    // clouds: last pre-pulse sample, t0, t0 + quarter period
    std::vector<PhaseSpaceCloud> clouds;
    std::vector<std::string> cloud_labels;
    std::vector<std::string> warnings;
};

inline std::size_t largest_pow2_at_most(std::size_t n) {
    std::size_t p = 1;
    while (p * 2 <= n) p *= 2;
    return p;
}

// Per-sample sums over traces, for mean and rms without holding the ensemble.
struct MomentSums {
    std::vector<double> s1, s2;
    std::size_t n = 0;

    void add(const TrajectoryEnsemble& ens) {
        if (s1.empty()) {
            s1.assign(ens.n_samples, 0.0);
            s2.assign(ens.n_samples, 0.0);
        }
        for (std::size_t i = 0; i < ens.n_traces(); ++i) {
            const auto row = ens.trace(i);
            for (std::size_t k = 0; k < ens.n_samples; ++k) {
                s1[k] += row[k];
                s2[k] += row[k] * row[k];
            }
        }
        n += ens.n_traces();
    }
    std::vector<double> mean() const {
        std::vector<double> m(s1.size());
        for (std::size_t k = 0; k < s1.size(); ++k) m[k] = s1[k] / static_cast<double>(n);
        return m;
    }
    std::vector<double> rms() const {
        std::vector<double> r(s1.size());
        const double nn = static_cast<double>(n);
        for (std::size_t k = 0; k < s1.size(); ++k)
            r[k] = std::sqrt(std::max(0.0, (s2[k] - s1[k] * s1[k] / nn) / (nn - 1.0)));
        return r;
    }
};

// Mean-trace spectrum and post-pulse relaxation fit; needs the moment traces.
inline void summarize_moments(EnsembleAnalysis& a) {
    if (a.valid_end <= a.valid_begin + 8) throw ConfigError("trace shorter than the filter settle windows");
    const double omega1 = a.schedule.trap.omega1;
    {
        const std::span<const double> span(a.mean_raw.data() + a.valid_begin, a.valid_end - a.valid_begin);
        a.mean_psd = welch_psd(span, a.dt, largest_pow2_at_most(span.size()), 0.5);
        std::size_t best = 1;
        for (std::size_t k = 1; k < a.mean_psd.density.size(); ++k)
            if (a.mean_psd.density[k] > a.mean_psd.density[best]) best = k;
        a.mean_peak_hz = a.mean_psd.frequency_hz[best];
    }
    const bool has_pulse = std::any_of(a.schedule.segments.begin(), a.schedule.segments.end(),
                                       [](const Segment& s) { return s.kind == SegmentKind::pulse; });
    if (!has_pulse) return;
    const double t_post = a.schedule.total_duration() + a.settle_time;
    const auto post_begin = static_cast<std::size_t>(
        std::lower_bound(a.times.begin(), a.times.end(), t_post - 1e-9 * a.dt) - a.times.begin());
    if (post_begin + 16 < a.valid_end) {
        const std::vector<double> t(a.times.begin() + static_cast<std::ptrdiff_t>(post_begin),
                                    a.times.begin() + static_cast<std::ptrdiff_t>(a.valid_end));
        const std::vector<double> r(a.rms_filtered.begin() + static_cast<std::ptrdiff_t>(post_begin),
                                    a.rms_filtered.begin() + static_cast<std::ptrdiff_t>(a.valid_end));
        a.decay = fit_rms_decay(t, r, omega1, 1e-6 * omega1, 0.2 * omega1);
    } else {
        a.warnings.push_back("trace too short after the pulse for the relaxation fit");
    }
}

inline double filter_center(const AnalysisSettings& as, double omega1) {
    return as.filter_center > 0.0 ? as.filter_center : omega1;
}

// Full analysis of a materialised ensemble: moments, relaxation, squeezing and clouds.
inline EnsembleAnalysis analyze_ensemble(const TrajectoryEnsemble& raw, const ExperimentConfig& cfg) {
    require_traces(raw, min_cloud_points);
    const double omega1 = raw.schedule.trap.omega1;
    const AnalysisSettings& as = cfg.analysis;
    const double center = filter_center(as, omega1);

    EnsembleAnalysis a;
    a.schedule = raw.schedule;
    a.n_traces = raw.n_traces();
    a.dt = raw.dt;
    a.settle_time = design_bandpass(raw.dt, center, as.filter_halfwidth).settle_time;
    TrajectoryEnsemble processed = bandpass_ensemble(raw, center, as.filter_halfwidth);
    a.valid_begin = processed.valid_begin;
    a.valid_end = processed.valid_end;
    a.times.resize(raw.n_samples);
    for (std::size_t k = 0; k < raw.n_samples; ++k) a.times[k] = raw.time(k);
    a.mean_raw = ensemble_mean_trace(raw);
    a.rms_raw = rms_trace(raw);
    a.mean_filtered = ensemble_mean_trace(processed);
    a.rms_filtered = rms_trace(processed);
    summarize_moments(a);

    // centre in place
    for (std::size_t i = 0; i < processed.n_traces(); ++i) {
        auto row = processed.trace(i);
        for (std::size_t k = 0; k < processed.n_samples; ++k) row[k] -= a.mean_filtered[k];
    }
    const bool has_pulse = std::any_of(a.schedule.segments.begin(), a.schedule.segments.end(),
                                       [](const Segment& s) { return s.kind == SegmentKind::pulse; });
    if (!has_pulse) return a;
    try {
        a.squeezing = measure_squeezing_processed(processed, a.settle_time, as);
        const SqueezingWindows win = squeezing_windows(processed, omega1, a.settle_time, as.t0_offset);
        const double mass = raw.params.particle.mass;
        const auto quarter = static_cast<std::size_t>(std::llround(constants::pi / (2.0 * omega1) / raw.dt));
        a.clouds.push_back(phase_space_cloud_at(processed, win.before.back(), mass, omega1));
        a.cloud_labels.push_back("before");
        a.clouds.push_back(phase_space_cloud_at(processed, win.after, mass, omega1));
        a.cloud_labels.push_back("t0");
        if (win.after + quarter + 2 < processed.valid_end) {
            a.clouds.push_back(phase_space_cloud_at(processed, win.after + quarter, mass, omega1));
            a.cloud_labels.push_back("t0_plus_quarter");
        }
    } catch (const ConfigError& e) {
        a.warnings.push_back(std::string("squeezing not measured: ") + e.what());
    }
    return a;
}

// Moments-only analysis of an ensemble simulated chunk by chunk; the traces
// are identical to a single run_ensemble call with the same seed.
inline EnsembleAnalysis analyze_streamed(const ExperimentConfig& cfg, std::size_t chunk = 500) {
    const SimulationParams params = cfg.simulation_params();
    const PulseSchedule sched = cfg.pulse_schedule();
    const double center = filter_center(cfg.analysis, cfg.omega1);
    MomentSums raw_sums, filt_sums;
    EnsembleAnalysis a;
    for (std::size_t first = 0; first < cfg.n_traces; first += chunk) {
        const std::size_t n = std::min(chunk, cfg.n_traces - first);
        const TrajectoryEnsemble ens =
            run_ensemble(params, sched, n, cfg.duration, cfg.dt, cfg.seed, cfg.threads, first);
        const TrajectoryEnsemble filtered = bandpass_ensemble(ens, center, cfg.analysis.filter_halfwidth);
        raw_sums.add(ens);
        filt_sums.add(filtered);
        if (first == 0) {
            a.valid_begin = filtered.valid_begin;
            a.valid_end = filtered.valid_end;
            a.times.resize(ens.n_samples);
            for (std::size_t k = 0; k < ens.n_samples; ++k) a.times[k] = ens.time(k);
        }
    }
    if (raw_sums.n < 2) throw DomainError("ensemble needs at least 2 traces");
    a.schedule = sched;
    a.n_traces = raw_sums.n;
    a.dt = cfg.dt;
    a.settle_time = design_bandpass(cfg.dt, center, cfg.analysis.filter_halfwidth).settle_time;
    a.mean_raw = raw_sums.mean();
    a.rms_raw = raw_sums.rms();
    a.mean_filtered = filt_sums.mean();
    a.rms_filtered = filt_sums.rms();
    summarize_moments(a);
    return a;
}

inline nlohmann::json analysis_json(const EnsembleAnalysis& a) {
    nlohmann::json j{{"n_traces", a.n_traces},
                     {"n_samples", a.times.size()},
                     {"dt_s", a.dt},
                     {"settle_time_s", a.settle_time},
                     {"valid_window_s", {a.times[a.valid_begin], a.times[a.valid_end - 1]}},
                     {"omega1_rad_s", a.schedule.trap.omega1},
                     {"omega2_rad_s", a.schedule.trap.omega2},
                     {"schedule", schedule_to_json(a.schedule)},
                     {"mean_trace_peak_hz", a.mean_peak_hz},
                     {"warnings", a.warnings}};
    if (a.decay)
        j["relaxation"] = {{"decay_rate_rad_s", a.decay->decay_rate},
                           {"baseline_var_m2", a.decay->baseline_var},
                           {"amplitudes_m2", {a.decay->amplitudes(0), a.decay->amplitudes(1), a.decay->amplitudes(2)}},
                           {"rms_residual_m2", a.decay->rms_residual}};
    if (a.squeezing) {
        const auto& s = *a.squeezing;
        j["squeezing"] = {{"lambda_db", s.lambda_db},
                          {"lambda_at_t0_db", s.lambda_at_t0_db},
                          {"lambda_stderr_db", s.lambda_stderr_db},
                          {"before", covariance_json(s.before)},
                          {"after", covariance_json(s.after)},
                          {"t_after_s", s.t_after},
                          {"before_samples", s.before_samples}};
        nlohmann::json clouds = nlohmann::json::object();
        for (std::size_t c = 0; c < a.clouds.size(); ++c) {
            const CovarianceState cov = cloud_covariance(a.clouds[c]);
            const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov.sigma);
            const Eigen::Vector2d major = es.eigenvectors().col(1);
            clouds[a.cloud_labels[c]] = {{"timestamp_s", a.clouds[c].timestamp},
                                         {"covariance", covariance_json(cov)},
                                         {"major_axis_angle_rad", std::atan2(major(1), major(0))}};
        }
        j["clouds"] = clouds;
    }
    return j;
}

inline void write_analysis(const EnsembleAnalysis& a, const fs::path& out) {
    write_columns(out / "ensemble_stats.csv",
                  {"t_s", "z_mean_m", "z_mean_filtered_m", "z_rms_m", "z_rms_filtered_m"},
                  {a.times, a.mean_raw, a.mean_filtered, a.rms_raw, a.rms_filtered});
    write_columns(out / "mean_psd.csv", {"f_hz", "psd_m2_per_hz"}, {a.mean_psd.frequency_hz, a.mean_psd.density});
    for (std::size_t c = 0; c < a.clouds.size(); ++c) {
        std::vector<double> x, p;
        for (const auto& pt : a.clouds[c].points) {
            x.push_back(pt(0));
            p.push_back(pt(1));
        }
        write_columns(out / ("cloud_" + a.cloud_labels[c] + ".csv"), {"x", "p"}, {x, p});
    }
    write_json(out / "analysis.json", analysis_json(a));
}

// ---- commands ----------------------------------------------------------------

inline TrajectoryEnsemble simulate_from_config(const ExperimentConfig& cfg) {
    return run_ensemble(cfg.simulation_params(), cfg.pulse_schedule(), cfg.n_traces, cfg.duration, cfg.dt, cfg.seed,
                        cfg.threads);
}

// simulate: <out>/ensemble.json + data file, manifest.json
inline fs::path cmd_simulate(const ExperimentConfig& cfg, const fs::path& out) {
    StageRunner run(out, "simulate");
    cfg.validate();
    const TrajectoryEnsemble ens = run.run("simulate", [&] { return simulate_from_config(cfg); });
    const fs::path side = run.run("write", [&] {
        return write_ensemble(ens, out, "ensemble", cfg.ensemble_format, config_to_json(cfg));
    });
    run.finish(&cfg, {{"master_seed", cfg.seed}});
    return side;
}

// analyze: reads an ensemble sidecar; analysis settings come from `override_cfg`
// when given, else from the snapshot embedded in the ensemble.
inline nlohmann::json cmd_analyze(const fs::path& sidecar, const fs::path& out,
                                  const std::optional<ExperimentConfig>& override_cfg = std::nullopt) {
    StageRunner run(out, "analyze");
    const LoadedEnsemble loaded = run.run("load", [&] { return read_ensemble(sidecar); });
    const ExperimentConfig cfg = override_cfg ? *override_cfg
                                 : loaded.config.empty() ? ExperimentConfig{}
                                                         : config_from_json(loaded.config);
    const EnsembleAnalysis a = run.run("analyze", [&] { return analyze_ensemble(loaded.ensemble, cfg); });
    run.run("write", [&] { write_analysis(a, out); });
    run.finish(&cfg, {{"master_seed", loaded.ensemble.master_seed},
                      {"bootstrap_seed", cfg.analysis.bootstrap_seed}});
    return analysis_json(a);
}

struct PsdFitOutput {
    PowerSpectrum psd;
    LorentzianFit fit;
    double radius = 0.0; // m, from gamma and the particle density
    double density = 0.0;
};

inline double particle_density(const ExperimentConfig& cfg) {
    if (cfg.particle.density) return *cfg.particle.density;
    const double r = cfg.particle.radius;
    return cfg.particle.mass / (4.0 / 3.0 * constants::pi * r * r * r);
}

inline PsdFitOutput fit_trace_psd(std::span<const double> z, double dt, const ExperimentConfig& cfg) {
    PsdFitOutput o;
    const std::size_t seg = std::min(cfg.psd_segment_length, largest_pow2_at_most(z.size()));
    o.psd = welch_psd(z, dt, seg, cfg.psd_overlap);
    // drop DC and fit on the one-sided band [0.2, 1.8] omega1
    std::vector<double> w, d;
    for (std::size_t k = 1; k < o.psd.frequency_hz.size(); ++k) {
        const double om = constants::two_pi * o.psd.frequency_hz[k];
        if (om < 0.2 * cfg.omega1 || om > 1.8 * cfg.omega1) continue;
        w.push_back(om);
        d.push_back(o.psd.density[k]);
    }
    LorentzianGuess guess;
    guess.center = cfg.omega1;
    o.fit = lorentzian_fit(w, d, guess);
    o.density = particle_density(cfg);
    o.radius = radius_from_damping(o.fit.gamma, cfg.gas, o.density);
    return o;
}

inline nlohmann::json psd_fit_json(const PsdFitOutput& o) {
    const Eigen::Vector4d se = o.fit.standard_errors();
    nlohmann::json cov = nlohmann::json::array();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) cov.push_back(o.fit.covariance(r, c));
    return {{"center_rad_s", o.fit.center},
            {"gamma_rad_s", o.fit.gamma},
            {"amplitude", o.fit.amplitude},
            {"floor_m2_per_hz", o.fit.floor},
            {"stderr", {{"center_rad_s", se(0)}, {"gamma_rad_s", se(1)}, {"amplitude", se(2)}, {"floor_m2_per_hz", se(3)}}},
            {"covariance_row_major", cov},
            {"iterations", o.fit.iterations},
            {"termination", o.fit.termination},
            {"welch_segments", o.psd.segments},
            {"density_kg_m3", o.density},
            {"radius_m", o.radius}};
}

inline void write_psd(const PsdFitOutput& o, const fs::path& out, const std::string& stem) {
    std::vector<double> model;
    for (double f : o.psd.frequency_hz) model.push_back(o.fit(constants::two_pi * f));
    write_columns(out / (stem + ".csv"), {"f_hz", "psd_m2_per_hz", "model_m2_per_hz"},
                  {o.psd.frequency_hz, o.psd.density, model});
    write_json(out / (stem + "_fit.json"), psd_fit_json(o));
}

// fit-psd: trace CSV with columns t_s and z_m (or the first data column).
inline nlohmann::json cmd_fit_psd(const fs::path& trace_csv, const fs::path& out, const ExperimentConfig& cfg) {
    StageRunner run(out, "fit-psd");
    const Table t = run.run("load", [&] { return read_table(trace_csv); });
    if (t.header.size() < 2 || t.header[0] != "t_s") throw ConfigError(trace_csv.string() + ": expected columns t_s,z_m");
    const auto& time = t.column("t_s");
    const auto& z = t.has("z_m") ? t.column("z_m") : t.columns[1];
    if (time.size() < 16) throw ConfigError(trace_csv.string() + ": trace too short");
    const double dt = (time.back() - time.front()) / static_cast<double>(time.size() - 1);
    const PsdFitOutput o = run.run("fit", [&] { return fit_trace_psd(z, dt, cfg); });
    run.run("write", [&] { write_psd(o, out, "psd"); });
    run.finish(&cfg, nlohmann::json::object());
    return psd_fit_json(o);
}

inline nlohmann::json squeezing_fit_json(const FitResult& f) {
    return {{"omega2_rad_s", f.omega2},
            {"eta", f.eta},
            {"omega2_stderr_rad_s", f.omega2_stderr},
            {"eta_stderr", f.eta_stderr},
            {"residual_norm", f.residual_norm},
            {"residuals", f.residuals},
            {"iterations", f.iterations},
            {"termination", f.termination},
            {"converged", f.converged},
            {"eta_at_bound", f.eta_at_bound}};
}

inline void write_model_curve(const fs::path& path, const FitResult& f, double omega1, double tau_max) {
    std::vector<double> tau, lam;
    for (int i = 0; i <= 200; ++i) {
        tau.push_back(tau_max * i / 200.0);
        lam.push_back(model_lambda(tau.back(), omega1, f.omega2, f.eta));
    }
    write_columns(path, {"tau_s", "lambda_db"}, {tau, lam});
}

inline FitResult fit_curve_with_config(const SqueezingCurve& curve, const ExperimentConfig& cfg) {
    FitOptions opt;
    opt.multistart = cfg.fit_multistart;
    return fit_squeezing_curve(curve, cfg.omega1, {cfg.resolved_fit_omega2_init(), cfg.fit_eta_init}, opt);
}

// fit-squeezing: curve CSV with tau_s, lambda_db and optionally sigma_db.
inline nlohmann::json cmd_fit_squeezing(const fs::path& curve_csv, const fs::path& out, const ExperimentConfig& cfg) {
    StageRunner run(out, "fit-squeezing");
    const SqueezingCurve curve = run.run("load", [&] {
        const Table t = read_table(curve_csv);
        SqueezingCurve c{t.column("tau_s"), t.column("lambda_db"), {}};
        if (t.has("sigma_db")) c.uncertainties = t.column("sigma_db");
        c.validate();
        return c;
    });
    const FitResult f = run.run("fit", [&] { return fit_curve_with_config(curve, cfg); });
    run.run("write", [&] {
        write_json(out / "squeezing_fit.json", squeezing_fit_json(f));
        write_model_curve(out / "squeezing_model.csv", f, cfg.omega1, curve.taus.back());
    });
    run.finish(&cfg, nlohmann::json::object());
    return squeezing_fit_json(f);
}

// ---- figure reproduction -------------------------------------------------------

inline const std::vector<std::string>& figure_names() {
    static const std::vector<std::string> names{"fig1c", "fig1d", "fig2", "fig4a", "fig4b"};
    return names;
}

struct SqueezingSweep {
    SqueezingCurve curve;
    std::vector<std::uint64_t> seeds;
};

// One ensemble per pulse length tau_k = k tau_max / (n - 1), k = 0..n-1, each
// with its own master seed derived from cfg.seed.
inline SqueezingSweep squeezing_sweep(const ExperimentConfig& cfg) {
    SqueezingSweep s;
    const std::size_t n = cfg.fig4a_n_taus;
    const double tau_max = cfg.resolved_tau_max();
    const SimulationParams params = cfg.simulation_params();
    for (std::size_t k = 0; k < n; ++k) {
        const double tau = tau_max * static_cast<double>(k) / static_cast<double>(n - 1);
        const PulseSchedule sched = PulseSchedule::single(cfg.trap(), tau);
        const std::uint64_t seed = derive_seed(cfg.seed, 1000 + k);
        const TrajectoryEnsemble ens = run_ensemble(params, sched, cfg.n_traces, cfg.pre_pulse + cfg.fig4a_duration,
                                                    cfg.dt, seed, cfg.threads);
        const SqueezingMeasurement m = measure_squeezing(ens, cfg.analysis);
        s.curve.taus.push_back(tau);
        s.curve.lambdas.push_back(m.lambda_db);
        s.curve.uncertainties.push_back(std::max(m.lambda_stderr_db, 1e-6));
        s.seeds.push_back(seed);
    }
    return s;
}

// Runs one figure pipeline into `out`; returns the figure summary JSON.
inline nlohmann::json cmd_reproduce(const std::string& figure, const ExperimentConfig& cfg, const fs::path& out) {
    if (std::find(figure_names().begin(), figure_names().end(), figure) == figure_names().end())
        throw ConfigError("unknown figure '" + figure + "' (fig1c, fig1d, fig2, fig4a, fig4b)");
    cfg.validate();
    StageRunner run(out, "reproduce " + figure);
    nlohmann::json summary{{"figure", figure}};
    nlohmann::json seeds{{"master_seed", cfg.seed}};

    if (figure == "fig4a") {
        const SqueezingSweep sweep = run.run("simulate+analyze", [&] { return squeezing_sweep(cfg); });
        seeds["per_tau_seeds"] = sweep.seeds;
        run.run("write-curve", [&] {
            write_columns(out / "fig4a_curve.csv", {"tau_s", "lambda_db", "sigma_db"},
                          {sweep.curve.taus, sweep.curve.lambdas, sweep.curve.uncertainties});
        });
        const FitResult f = run.run("fit", [&] { return fit_curve_with_config(sweep.curve, cfg); });
        double peak = 0.0;
        for (int i = 0; i <= 400; ++i)
            peak = std::max(peak, model_lambda(sweep.curve.taus.back() * i / 400.0, cfg.omega1, f.omega2, f.eta));
        summary["fit"] = squeezing_fit_json(f);
        summary["fit_peak_lambda_db"] = peak;
        summary["injected"] = {{"omega2_rad_s", cfg.omega2}, {"eta", cfg.eta()}};
        run.run("write", [&] {
            write_model_curve(out / "fig4a_model.csv", f, cfg.omega1, sweep.curve.taus.back());
            write_json(out / "fig4a.json", summary);
        });
    } else if (figure == "fig4b") {
        const PsdFitOutput o = run.run("simulate+fit", [&] {
            PulseSchedule idle;
            idle.trap = cfg.trap();
            idle.segments = {{SegmentKind::gap, 0.0}};
            SimulationParams p = cfg.simulation_params();
            p.pre_pulse = 0.0;
            const std::vector<double> z = simulate_trajectory(p, idle, cfg.psd_trace_duration, cfg.dt, cfg.seed);
            return fit_trace_psd(z, cfg.dt, cfg);
        });
        summary["fit"] = psd_fit_json(o);
        summary["injected"] = {{"gamma_rad_s", cfg.resolved_gamma()}, {"radius_m", cfg.particle.radius}};
        run.run("write", [&] {
            write_psd(o, out, "fig4b_psd");
            write_json(out / "fig4b.json", summary);
        });
    } else {
        // fig1c and fig1d only need ensemble moments, so they stream; fig2 needs the clouds
        const EnsembleAnalysis a = figure == "fig2"
                                       ? run.run("simulate+analyze", [&] { return analyze_ensemble(simulate_from_config(cfg), cfg); })
                                       : run.run("simulate+analyze", [&] { return analyze_streamed(cfg); });
        summary["analysis"] = analysis_json(a);
        summary["injected"] = {{"gamma_rad_s", cfg.resolved_gamma()}, {"eta", cfg.eta()},
                               {"lambda_max_db", lambda_max(cfg.trap())}};
        run.run("write", [&] {
            write_analysis(a, out);
            write_json(out / (figure + ".json"), summary);
        });
    }
    run.finish(&cfg, seeds);
    return summary;
}

} // namespace levsq::io
