#pragma once

// Phase-space reconstruction from position-only traces and squeezing
// extraction from the resulting clouds.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "levsq/constants.hpp"
#include "levsq/ensemble_stats.hpp"
#include "levsq/errors.hpp"
#include "levsq/filter.hpp"
#include "levsq/gaussian_model.hpp"
#include "levsq/langevin.hpp"
#include "levsq/rng.hpp"

namespace levsq {

// Fourth-order central difference in the interior, lower-order stencils at the
// two samples nearest each end.
inline double derivative_at(std::span<const double> z, std::size_t k, double dt) {
    const std::size_t n = z.size();
    if (n < 3) throw DomainError("derivative needs at least 3 samples");
    if (k >= 2 && k + 2 < n) return (z[k - 2] - 8.0 * z[k - 1] + 8.0 * z[k + 1] - z[k + 2]) / (12.0 * dt);
    if (k == 0) return (-3.0 * z[0] + 4.0 * z[1] - z[2]) / (2.0 * dt);
    if (k == n - 1) return (3.0 * z[n - 1] - 4.0 * z[n - 2] + z[n - 3]) / (2.0 * dt);
    return (z[k + 1] - z[k - 1]) / (2.0 * dt);
}

struct MomentumTrace {
    std::vector<double> values; // kg m/s
    // values [0, edge) and [size - edge, size) use reduced-order stencils
    std::size_t edge = 2;
};

inline MomentumTrace estimate_momentum(std::span<const double> z, double dt, double mass) {
    if (z.size() < 3) throw DomainError("estimate_momentum: trace needs at least 3 samples");
    MomentumTrace out;
    out.values.resize(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) out.values[k] = mass * derivative_at(z, k, dt);
    out.edge = std::min<std::size_t>(2, z.size());
    return out;
}

struct PhaseSpaceCloud {
    std::vector<Eigen::Vector2d> points; // (X, P), vacuum <X^2> = 1/2
    double timestamp = 0.0;              // s relative to the end of the pulse schedule
};

// Quadrature scale factors for mode a: X = z sqrt(m w1 / hbar), P = p / sqrt(hbar m w1).
inline Eigen::Vector2d quadrature_scale(double mass, double omega1) {
    return {std::sqrt(mass * omega1 / constants::hbar), 1.0 / std::sqrt(constants::hbar * mass * omega1)};
}

inline PhaseSpaceCloud phase_space_cloud_at(const TrajectoryEnsemble& ens, std::size_t k, double mass, double omega1) {
    const std::size_t lo = ens.valid_begin + 2;
    const std::size_t hi = ens.valid_end >= 2 ? ens.valid_end - 2 : 0;
    if (k < lo || k >= hi)
        throw DomainError("phase_space_cloud: t = " + std::to_string(ens.time(k))
                          + " s lies in a filter settle window or at the trace edge");
    const Eigen::Vector2d scale = quadrature_scale(mass, omega1);
    PhaseSpaceCloud cloud;
    cloud.timestamp = ens.time(k) - ens.schedule_end();
    cloud.points.reserve(ens.n_traces());
    for (std::size_t i = 0; i < ens.n_traces(); ++i) {
        const auto row = ens.trace(i);
        const double p = mass * derivative_at(row, k, ens.dt);
        cloud.points.emplace_back(row[k] * scale(0), p * scale(1));
    }
    return cloud;
}

// One (X, P) point per trace at the sample nearest `at_time` (schedule-start clock).
inline PhaseSpaceCloud phase_space_cloud(const TrajectoryEnsemble& ens, double at_time, double mass, double omega1) {
    const double kf = std::round((at_time - ens.t_start) / ens.dt);
    if (kf < 0.0 || kf >= static_cast<double>(ens.n_samples))
        throw DomainError("phase_space_cloud: time outside the trace span");
    return phase_space_cloud_at(ens, static_cast<std::size_t>(kf), mass, omega1);
}

inline constexpr std::size_t min_cloud_points = 30;

// Unbiased sample covariance, reported in the vacuum = identity convention (2 x cov).
inline CovarianceState cloud_covariance(const PhaseSpaceCloud& cloud) {
    const std::size_t n = cloud.points.size();
    if (n < min_cloud_points)
        throw DomainError("cloud_covariance: need at least " + std::to_string(min_cloud_points) + " points, got "
                          + std::to_string(n));
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : cloud.points) mean += p;
    mean /= static_cast<double>(n);
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& p : cloud.points) {
        const Eigen::Vector2d d = p - mean;
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(n - 1);
    CovarianceState s;
    s.sigma = 2.0 * cov;
    s.mean = mean;
    if (!(s.eigenvalues()(0) > 0.0)) throw NumericalError("cloud_covariance: degenerate cloud (zero variance)");
    return s;
}

// 10 log10(sigma_iso_before / sigma_minor_after), standard deviations.
inline double measured_squeezing_db(const CovarianceState& before, const CovarianceState& after) {
    const double iso_var = 0.5 * before.sigma.trace();
    const double minor_var = after.eigenvalues()(0);
    if (!(iso_var > 0.0) || !(minor_var > 0.0)) throw DomainError("measured_squeezing_db: non-positive variance");
    return 5.0 * std::log10(iso_var / minor_var);
}

struct AnalysisSettings {
    double filter_center = 0.0;                           // rad/s, 0 = omega1
    double filter_halfwidth = constants::two_pi * 30e3;   // rad/s
    double t0_offset = 0.0;                               // s added to the first valid post-pulse sample
    double relaxation_gamma = 0.0; // rad/s; > 0 undoes thermal relaxation between pulse end and t0
    std::size_t bootstrap = 100;
    std::uint64_t bootstrap_seed = 12345;
};

struct SqueezingMeasurement {
    double lambda_db = 0.0;        // relaxation-corrected when AnalysisSettings::relaxation_gamma > 0
    double lambda_at_t0_db = 0.0;  // as measured at t0
    double lambda_stderr_db = 0.0; // bootstrap over traces
    CovarianceState before;        // averaged over one omega1 period before the pulse
    CovarianceState after;
    double t_after = 0.0;          // s relative to schedule end
    std::size_t before_samples = 0;
};

// Processed ensemble: filtered and centred. Pre-pulse and post-pulse sample windows are
// derived from the settle window that bandpass_ensemble recorded in valid_begin.
struct SqueezingWindows {
    std::vector<std::size_t> before;
    std::size_t after = 0;
};

inline SqueezingWindows squeezing_windows(const TrajectoryEnsemble& processed, double omega1, double settle_time,
                                          double t0_offset) {
    const double period = constants::two_pi / omega1;
    const double before_end = -settle_time; // schedule starts at t = 0
    const std::size_t k_end = processed.index_at(before_end);
    const std::size_t k_begin = processed.index_at(before_end - period);
    SqueezingWindows w;
    for (std::size_t k = k_begin; k < k_end; ++k) w.before.push_back(k);
    if (w.before.empty() || k_begin < processed.valid_begin + 2)
        throw ConfigError("pre-pulse window too short: need at least two settle windows plus one omega1 period");
    w.after = processed.index_at(processed.schedule_end() + settle_time + t0_offset);
    if (w.after + 2 >= processed.valid_end) throw ConfigError("post-pulse window too short for the settle window");
    return w;
}

namespace detail {

inline CovarianceState average_covariance(const std::vector<CovarianceState>& states) {
    CovarianceState avg;
    avg.sigma.setZero();
    avg.mean.setZero();
    for (const auto& s : states) {
        avg.sigma += s.sigma;
        avg.mean += s.mean;
    }
    avg.sigma /= static_cast<double>(states.size());
    avg.mean /= static_cast<double>(states.size());
    return avg;
}

} // namespace detail

// Maps a covariance measured a time t after pulse end back to the pulse end,
// assuming the excess over the isotropic thermal level `thermal_var` decays
// as exp(-gamma t). Only the eigenvalues matter downstream, so the free
// rotation during t is not undone.
inline CovarianceState undo_relaxation(const CovarianceState& s, double thermal_var, double gamma, double t) {
    CovarianceState out = s;
    const Eigen::Matrix2d th = thermal_var * Eigen::Matrix2d::Identity();
    out.sigma = th + std::exp(gamma * t) * (s.sigma - th);
    if (!(out.eigenvalues()(0) > 0.0))
        throw NumericalError("relaxation correction produced a non-positive covariance (gamma too large for t0)");
    return out;
}

// Squeezing from a filtered, mean-subtracted ensemble.
inline SqueezingMeasurement measure_squeezing_processed(const TrajectoryEnsemble& processed, double settle_time,
                                                        const AnalysisSettings& settings) {
    const double omega1 = processed.schedule.trap.omega1;
    const double mass = processed.params.particle.mass;
    const SqueezingWindows win = squeezing_windows(processed, omega1, settle_time, settings.t0_offset);

    std::vector<PhaseSpaceCloud> before_clouds;
    for (std::size_t k : win.before) before_clouds.push_back(phase_space_cloud_at(processed, k, mass, omega1));
    const PhaseSpaceCloud after_cloud = phase_space_cloud_at(processed, win.after, mass, omega1);
    const double t_after = after_cloud.timestamp;

    struct Eval {
        CovarianceState before, after;
        double at_t0 = 0.0, corrected = 0.0;
    };
    auto evaluate = [&](const std::vector<std::size_t>* idx) {
        auto resample = [&](const PhaseSpaceCloud& c) {
            if (!idx) return c;
            PhaseSpaceCloud r;
            r.timestamp = c.timestamp;
            r.points.reserve(idx->size());
            for (std::size_t i : *idx) r.points.push_back(c.points[i]);
            return r;
        };
        std::vector<CovarianceState> covs;
        for (const auto& c : before_clouds) covs.push_back(cloud_covariance(resample(c)));
        Eval e;
        e.before = detail::average_covariance(covs);
        e.after = cloud_covariance(resample(after_cloud));
        e.at_t0 = measured_squeezing_db(e.before, e.after);
        e.corrected = e.at_t0;
        if (settings.relaxation_gamma > 0.0)
            e.corrected = measured_squeezing_db(
                e.before, undo_relaxation(e.after, 0.5 * e.before.sigma.trace(), settings.relaxation_gamma, t_after));
        return e;
    };

    const Eval full = evaluate(nullptr);
    SqueezingMeasurement m;
    m.lambda_db = full.corrected;
    m.lambda_at_t0_db = full.at_t0;
    m.before = full.before;
    m.after = full.after;
    m.t_after = t_after;
    m.before_samples = win.before.size();

    if (settings.bootstrap >= 2) {
        Engine rng(settings.bootstrap_seed);
        const std::size_t n = processed.n_traces();
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<std::size_t> idx(n);
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t b = 0; b < settings.bootstrap; ++b) {
            for (auto& i : idx) i = pick(rng);
            const double l = evaluate(&idx).corrected;
            sum += l;
            sum2 += l * l;
        }
        const double nb = static_cast<double>(settings.bootstrap);
        m.lambda_stderr_db = std::sqrt(std::max(0.0, (sum2 - sum * sum / nb) / (nb - 1.0)));
    }
    return m;
}

// filter -> ensemble-mean subtraction -> momentum -> clouds -> lambda.
inline SqueezingMeasurement measure_squeezing(const TrajectoryEnsemble& raw, const AnalysisSettings& settings) {
    const double omega1 = raw.schedule.trap.omega1;
    const double center = settings.filter_center > 0.0 ? settings.filter_center : omega1;
    const BandpassFilter filt = design_bandpass(raw.dt, center, settings.filter_halfwidth);
    const TrajectoryEnsemble processed = subtract_ensemble_mean(bandpass_ensemble(raw, center, settings.filter_halfwidth));
    return measure_squeezing_processed(processed, filt.settle_time, settings);
}

} // namespace levsq
