#pragma once

// Classical Langevin ensemble simulator for the z motion of a levitated
// particle under a piecewise-constant trap frequency.
//
//   dz = p/m dt,   dp = -m w(t)^2 (z - c(t)) dt - Gamma p dt + sqrt(2 m Gamma kB T) dW
//
// Internally time is measured in 1/omega1, position in the thermal std
// sqrt(kB T / (m omega1^2)) and velocity in omega1 times that. The system is
// linear, so each constant-coefficient interval is advanced with its exact
// Gaussian transition (drift matrix exponential + noise Cholesky factor).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "levsq/constants.hpp"
#include "levsq/errors.hpp"
#include "levsq/rng.hpp"
#include "levsq/squeeze_core.hpp"

namespace levsq {

struct ParticleParams {
    double radius = 0.0;           // m
    double mass = 0.0;             // kg
    std::optional<double> density; // kg/m^3

    void validate() const {
        if (!(radius > 0.0) || !(mass > 0.0)) throw DomainError("particle radius and mass must be positive");
        if (density) {
            const double m_sphere = 4.0 / 3.0 * constants::pi * radius * radius * radius * *density;
            if (!(*density > 0.0) || std::abs(m_sphere - mass) > 0.2 * mass)
                throw DomainError("particle mass inconsistent with radius and density (>20%)");
        }
    }
};

struct GasEnvironment {
    double pressure = 0.0;      // Pa
    double temperature = 300.0; // K
    double molecule_mass = constants::air_molecule_mass; // kg

    void validate() const {
        if (!(pressure >= 0.0) || !(temperature > 0.0) || !(molecule_mass > 0.0))
            throw DomainError("gas pressure must be >= 0, temperature and molecule mass > 0");
    }

    double mean_thermal_velocity() const {
        return std::sqrt(3.0 * constants::k_boltzmann * temperature / molecule_mass);
    }
};

struct TrapOptics {
    double power = 0.0;          // W
    double polarizability = 0.0; // C m^2 / V
    double waist = 0.0;          // m

    void validate() const {
        if (!(power > 0.0) || !(polarizability > 0.0) || !(waist > 0.0))
            throw DomainError("trap optics parameters must be positive");
    }

    // axial stiffness k0 = 8 alpha P / (c pi eps0 w^4)
    double stiffness() const {
        validate();
        const double w2 = waist * waist;
        return 8.0 * polarizability * power / (constants::speed_of_light * constants::pi * constants::epsilon0 * w2 * w2);
    }
};

// Free-molecular gas damping, Gamma ~ 15.8 r^2 p / (m v_gas).
inline double gas_damping(const ParticleParams& particle, const GasEnvironment& gas) {
    particle.validate();
    gas.validate();
    const double r = particle.radius;
    return 15.8 * r * r * gas.pressure / (particle.mass * gas.mean_thermal_velocity());
}

// Inverse of gas_damping for a sphere of known density (m = 4/3 pi r^3 rho).
inline double radius_from_damping(double gamma, const GasEnvironment& gas, double density) {
    gas.validate();
    if (!(gamma > 0.0) || !(density > 0.0)) throw DomainError("radius_from_damping: gamma and density must be > 0");
    return 15.8 * gas.pressure / (4.0 / 3.0 * constants::pi * density * gas.mean_thermal_velocity() * gamma);
}

inline double trap_frequency(const TrapOptics& optics, double mass) {
    if (!(mass > 0.0)) throw DomainError("trap_frequency: mass must be positive");
    return std::sqrt(optics.stiffness() / mass);
}

struct PhasePoint {
    double z = 0.0; // m
    double p = 0.0; // kg m/s
};

struct SimulationParams {
    ParticleParams particle;
    double temperature = 300.0;   // bath temperature, K
    double gamma = 0.0;           // velocity damping, rad/s
    double pre_pulse = 0.0;       // s at omega1 before the schedule starts
    double jitter_std = 0.0;      // rad, Gaussian phase kick of the pulse mode, once per pulse
    double pulse_offset_z = 0.0;  // m, trap-centre shift while a pulse is on
    double noise_floor = 0.0;     // m/sqrt(Hz), additive detection noise
    std::uint64_t max_steps = 4'000'000'000ULL; // samples x traces
    std::optional<PhasePoint> initial; // replaces the thermal draw when set

    void validate() const {
        particle.validate();
        if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
        if (!(gamma >= 0.0)) throw DomainError("gamma must be >= 0");
        if (!(pre_pulse >= 0.0)) throw DomainError("pre_pulse must be >= 0");
        if (!(jitter_std >= 0.0)) throw DomainError("jitter std must be >= 0");
        if (!(noise_floor >= 0.0)) throw DomainError("noise floor must be >= 0");
    }

    // thermal position std at omega1
    double position_scale(double omega1) const {
        return std::sqrt(constants::k_boltzmann * temperature / (particle.mass * omega1 * omega1));
    }
};

struct TrajectoryEnsemble {
    double dt = 0.0;
    double t_start = 0.0; // time of sample 0 relative to the start of the schedule
    std::size_t n_samples = 0;
    std::vector<double> data; // row-major, one row per trace, metres
    std::vector<std::uint64_t> seeds;
    std::uint64_t master_seed = 0;
    SimulationParams params;
    PulseSchedule schedule;
    // samples outside [valid_begin, valid_end) are filter transients
    std::size_t valid_begin = 0;
    std::size_t valid_end = 0;

    std::size_t n_traces() const { return n_samples == 0 ? 0 : data.size() / n_samples; }
    std::span<double> trace(std::size_t i) { return {data.data() + i * n_samples, n_samples}; }
    std::span<const double> trace(std::size_t i) const { return {data.data() + i * n_samples, n_samples}; }
    double time(std::size_t k) const { return t_start + static_cast<double>(k) * dt; }

    // first index with time(k) >= t (clamped to n_samples)
    std::size_t index_at(double t) const {
        const double k = std::ceil((t - t_start) / dt - 1e-9);
        if (k <= 0.0) return 0;
        return std::min(n_samples, static_cast<std::size_t>(k));
    }

    double schedule_end() const { return schedule.total_duration(); }
};

namespace detail {

// Exact transition over one constant-coefficient interval, nondimensional units.
struct Kernel {
    Eigen::Matrix2d phi;
    Eigen::Matrix2d chol; // lower-triangular factor of the noise covariance
    double offset = 0.0;  // trap centre
    bool noisy = false;
};

inline Kernel make_kernel(double w, double g, double h, double offset) {
    const double a = 0.5 * g;
    const double wd2 = w * w - a * a;
    double c, s;
    if (wd2 > 1e-14) {
        const double wd = std::sqrt(wd2);
        c = std::cos(wd * h);
        s = std::sin(wd * h) / wd;
    } else if (wd2 < -1e-14) {
        const double k = std::sqrt(-wd2);
        c = std::cosh(k * h);
        s = std::sinh(k * h) / k;
    } else {
        c = 1.0;
        s = h;
    }
    Eigen::Matrix2d shifted; // A + a I, which squares to -wd2 I
    shifted << a, 1.0, -w * w, -a;
    Kernel k;
    k.phi = std::exp(-a * h) * (c * Eigen::Matrix2d::Identity() + s * shifted);
    k.offset = offset;
    k.chol.setZero();
    if (g > 0.0) {
        // stationary covariance diag(1/w^2, 1) fixes the increment covariance exactly
        Eigen::Matrix2d stat = Eigen::Matrix2d::Zero();
        stat(0, 0) = 1.0 / (w * w);
        stat(1, 1) = 1.0;
        Eigen::Matrix2d q = stat - k.phi * stat * k.phi.transpose();
        const double l00 = std::sqrt(std::max(q(0, 0), 0.0));
        const double l10 = l00 > 0.0 ? 0.5 * (q(1, 0) + q(0, 1)) / l00 : 0.0;
        const double l11 = std::sqrt(std::max(q(1, 1) - l10 * l10, 0.0));
        k.chol << l00, 0.0, l10, l11;
        k.noisy = true;
    }
    return k;
}

enum class OpKind { propagate, jitter, emit };

struct Op {
    OpKind kind;
    std::size_t kernel = 0; // propagate
    double w = 1.0;         // jitter: pulse-mode frequency / omega1
    double offset = 0.0;    // jitter: trap centre during the pulse
};

// Shared, read-only step program for all traces of an ensemble.
struct Plan {
    std::vector<Kernel> kernels;
    std::vector<Op> ops;
    std::size_t n_samples = 0;
    double scale_z = 1.0; // metres per unit x
    double scale_p = 1.0; // kg m/s per unit v
};

inline Plan make_plan(const SimulationParams& params, const PulseSchedule& schedule, double duration, double dt) {
    params.validate();
    schedule.validate();
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
    if (!(duration > 0.0)) throw ConfigError("duration must be positive");
    const double w_max = std::max(schedule.trap.omega1, schedule.trap.omega2);
    if (w_max * dt >= constants::pi)
        throw ConfigError("sampling interval dt violates Nyquist for the trap frequencies");
    const double sched_end = params.pre_pulse + schedule.total_duration();
    if (sched_end > duration * (1.0 + 1e-12))
        throw ConfigError("pulse schedule (" + std::to_string(sched_end) + " s incl. pre-pulse) exceeds duration ("
                          + std::to_string(duration) + " s)");

    const double omega1 = schedule.trap.omega1;
    Plan plan;
    plan.scale_z = params.position_scale(omega1);
    plan.scale_p = params.particle.mass * omega1 * plan.scale_z;
    plan.n_samples = static_cast<std::size_t>(std::floor(duration / dt + 1e-9)) + 1;

    const double g = params.gamma / omega1;
    const double w2 = schedule.trap.ratio();
    const double c_pulse = params.pulse_offset_z / plan.scale_z;

    // (w, offset, end time) pieces in seconds, then the trailing omega1 stretch
    struct Piece { double w, offset, end; bool pulse; };
    std::vector<Piece> pieces;
    double t = params.pre_pulse;
    pieces.push_back({1.0, 0.0, t, false});
    for (const auto& seg : schedule.segments) {
        t += seg.duration;
        const bool pulse = seg.kind == SegmentKind::pulse;
        pieces.push_back({pulse ? w2 : 1.0, pulse ? c_pulse : 0.0, t, pulse});
    }
    pieces.push_back({1.0, 0.0, INFINITY, false});

    std::map<std::tuple<double, double, double>, std::size_t> cache;
    auto kernel_for = [&](double w, double offset, double h_sec) {
        const double h = h_sec * omega1;
        const auto key = std::make_tuple(w, offset, h);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
        plan.kernels.push_back(make_kernel(w, g, h, offset));
        cache.emplace(key, plan.kernels.size() - 1);
        return plan.kernels.size() - 1;
    };

    plan.ops.push_back({OpKind::emit});
    std::size_t piece = 0;
    double now = 0.0;
    for (std::size_t k = 1; k < plan.n_samples; ++k) {
        const double target = static_cast<double>(k) * dt;
        while (now < target) {
            while (pieces[piece].end <= now) {
                if (pieces[piece].pulse) plan.ops.push_back({OpKind::jitter, 0, pieces[piece].w, pieces[piece].offset});
                ++piece;
            }
            const double stop = std::min(target, pieces[piece].end);
            // full steps reuse one kernel; boundary fragments get their own
            const double h = (stop == target && now == static_cast<double>(k - 1) * dt) ? dt : stop - now;
            if (h > 0.0) plan.ops.push_back({OpKind::propagate, kernel_for(pieces[piece].w, pieces[piece].offset, h)});
            now = stop;
        }
        now = target;
        plan.ops.push_back({OpKind::emit});
    }
    // pulses ending exactly at the final sample
    while (piece < pieces.size() && pieces[piece].end <= now) {
        if (pieces[piece].pulse) plan.ops.push_back({OpKind::jitter, 0, pieces[piece].w, pieces[piece].offset});
        ++piece;
    }
    return plan;
}

inline void run_plan(const Plan& plan, const SimulationParams& params, std::uint64_t seed, std::span<double> out) {
    Engine rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Vector2d y;
    if (params.initial) {
        y << params.initial->z / plan.scale_z, params.initial->p / plan.scale_p;
    } else {
        const double x0 = normal(rng);
        const double v0 = normal(rng);
        y << x0, v0;
    }
    std::size_t k = 0;
    for (const Op& op : plan.ops) {
        switch (op.kind) {
        case OpKind::emit:
            out[k++] = y(0) * plan.scale_z;
            break;
        case OpKind::propagate: {
            const Kernel& kern = plan.kernels[op.kernel];
            Eigen::Vector2d rel(y(0) - kern.offset, y(1));
            rel = kern.phi * rel;
            if (kern.noisy) {
                const double n0 = normal(rng);
                const double n1 = normal(rng);
                rel += kern.chol * Eigen::Vector2d(n0, n1);
            }
            y << rel(0) + kern.offset, rel(1);
            break;
        }
        case OpKind::jitter: {
            if (params.jitter_std <= 0.0) break;
            // rotate the pulse mode by phi: (w x, v) -> R(phi) (w x, v)
            const double phi = params.jitter_std * normal(rng);
            const double c = std::cos(phi), s = std::sin(phi);
            const double wx = op.w * (y(0) - op.offset);
            const double v = y(1);
            y << (c * wx + s * v) / op.w + op.offset, -s * wx + c * v;
            break;
        }
        }
    }
}

} // namespace detail

// White detection noise with one-sided density noise_floor^2 (m^2/Hz).
inline void add_measurement_noise(std::span<double> trace, double dt, double noise_floor, std::uint64_t seed) {
    if (!(noise_floor >= 0.0)) throw DomainError("noise floor must be >= 0");
    if (noise_floor == 0.0) return;
    if (!(dt > 0.0)) throw DomainError("dt must be positive");
    const double sigma = noise_floor / std::sqrt(2.0 * dt);
    Engine rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    for (double& z : trace) z += normal(rng);
}

inline std::vector<double> simulate_trajectory(const SimulationParams& params, const PulseSchedule& schedule,
                                               double duration, double dt, std::uint64_t seed) {
    const detail::Plan plan = detail::make_plan(params, schedule, duration, dt);
    std::vector<double> out(plan.n_samples);
    detail::run_plan(plan, params, seed, out);
    add_measurement_noise(out, dt, params.noise_floor, substream(seed, 1));
    return out;
}

// n_traces independent runs, each from a fresh thermal draw. Trace i uses
// derive_seed(master_seed, first_trace + i), so an ensemble can be produced in
// chunks; the result does not depend on `threads`.
inline TrajectoryEnsemble run_ensemble(const SimulationParams& params, const PulseSchedule& schedule,
                                       std::size_t n_traces, double duration, double dt, std::uint64_t master_seed,
                                       unsigned threads = 0, std::size_t first_trace = 0) {
    if (n_traces < 1) throw ConfigError("n_traces must be >= 1");
    const detail::Plan plan = detail::make_plan(params, schedule, duration, dt);
    const double total = static_cast<double>(plan.n_samples) * static_cast<double>(n_traces);
    if (total > static_cast<double>(params.max_steps))
        throw ConfigError("ensemble of " + std::to_string(n_traces) + " x " + std::to_string(plan.n_samples)
                          + " samples exceeds max_steps = " + std::to_string(params.max_steps));

    TrajectoryEnsemble ens;
    ens.dt = dt;
    ens.t_start = -params.pre_pulse;
    ens.n_samples = plan.n_samples;
    ens.master_seed = master_seed;
    ens.params = params;
    ens.schedule = schedule;
    ens.valid_begin = 0;
    ens.valid_end = plan.n_samples;
    ens.data.assign(n_traces * plan.n_samples, 0.0);
    ens.seeds.resize(n_traces);
    for (std::size_t i = 0; i < n_traces; ++i) ens.seeds[i] = derive_seed(master_seed, first_trace + i);

    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_traces));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n_traces; i = next++) {
            auto row = ens.trace(i);
            detail::run_plan(plan, params, ens.seeds[i], row);
            add_measurement_noise(row, dt, params.noise_floor, substream(ens.seeds[i], 1));
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    return ens;
}

} // namespace levsq
