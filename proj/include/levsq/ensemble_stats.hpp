#pragma once

#include <cmath>
#include <vector>

#include <boost/math/tools/minima.hpp>
#include <Eigen/Dense>

#include "levsq/errors.hpp"
#include "levsq/langevin.hpp"

namespace levsq {

inline void require_traces(const TrajectoryEnsemble& ens, std::size_t min_traces) {
    if (ens.n_traces() < min_traces)
        throw DomainError("ensemble needs at least " + std::to_string(min_traces) + " traces");
}

// Pointwise mean over traces.
inline std::vector<double> ensemble_mean_trace(const TrajectoryEnsemble& ens) {
    require_traces(ens, 2);
    std::vector<double> mean(ens.n_samples, 0.0);
    for (std::size_t i = 0; i < ens.n_traces(); ++i) {
        const auto row = ens.trace(i);
        for (std::size_t k = 0; k < ens.n_samples; ++k) mean[k] += row[k];
    }
    for (double& m : mean) m /= static_cast<double>(ens.n_traces());
    return mean;
}

inline TrajectoryEnsemble subtract_ensemble_mean(const TrajectoryEnsemble& ens) {
    const auto mean = ensemble_mean_trace(ens);
    TrajectoryEnsemble out = ens;
    for (std::size_t i = 0; i < ens.n_traces(); ++i) {
        auto row = out.trace(i);
        for (std::size_t k = 0; k < ens.n_samples; ++k) row[k] -= mean[k];
    }
    return out;
}

// Pointwise ensemble standard deviation sqrt(<(z - <z>)^2>), 1/(n-1) normalised.
inline std::vector<double> rms_trace(const TrajectoryEnsemble& ens) {
    const auto mean = ensemble_mean_trace(ens);
    std::vector<double> acc(ens.n_samples, 0.0);
    for (std::size_t i = 0; i < ens.n_traces(); ++i) {
        const auto row = ens.trace(i);
        for (std::size_t k = 0; k < ens.n_samples; ++k) {
            const double d = row[k] - mean[k];
            acc[k] += d * d;
        }
    }
    for (double& a : acc) a = std::sqrt(a / static_cast<double>(ens.n_traces() - 1));
    return acc;
}

struct EnvelopeFit {
    double decay_rate = 0.0;   // rad/s, decay of the excess variance
    double baseline_var = 0.0; // m^2, fitted asymptote
    Eigen::Vector3d amplitudes = Eigen::Vector3d::Zero(); // mean, cos(2 w t), sin(2 w t) terms at t = t_begin
    double rms_residual = 0.0; // m^2
};

// Fits var(t) = baseline + exp(-rate (t - t0)) [a + b cos(2 w (t - t0)) + c sin(2 w (t - t0))]
// to the post-pulse variance of an rms trace. The rate is found by a bounded
// 1-D search over log(rate); baseline, a, b, c are solved linearly at each
// trial rate. Fitting the baseline on the tail, rather than fixing it to the
// pre-pulse level, keeps the rate unbiased when that level is itself noisy.
inline EnvelopeFit fit_rms_decay(const std::vector<double>& times, const std::vector<double>& rms, double omega,
                                 double rate_min, double rate_max) {
    if (times.size() != rms.size() || times.size() < 8) throw DomainError("fit_rms_decay: need >= 8 matched samples");
    if (!(rate_min > 0.0) || !(rate_max > rate_min)) throw DomainError("fit_rms_decay: bad rate bracket");
    const auto n = static_cast<Eigen::Index>(times.size());
    const double t0 = times.front();
    Eigen::VectorXd var(n);
    for (Eigen::Index k = 0; k < n; ++k) var(k) = rms[static_cast<std::size_t>(k)] * rms[static_cast<std::size_t>(k)];

    auto solve = [&](double rate, Eigen::Vector4d& coef) {
        Eigen::MatrixXd a(n, 4);
        for (Eigen::Index k = 0; k < n; ++k) {
            const double dt = times[static_cast<std::size_t>(k)] - t0;
            const double env = std::exp(-rate * dt);
            a(k, 0) = 1.0;
            a(k, 1) = env;
            a(k, 2) = env * std::cos(2.0 * omega * dt);
            a(k, 3) = env * std::sin(2.0 * omega * dt);
        }
        coef = a.colPivHouseholderQr().solve(var);
        return (a * coef - var).squaredNorm();
    };

    Eigen::Vector4d coef;
    const auto best = boost::math::tools::brent_find_minima(
        [&](double log_rate) { return solve(std::exp(log_rate), coef); }, std::log(rate_min), std::log(rate_max), 40);

    EnvelopeFit fit;
    fit.decay_rate = std::exp(best.first);
    const double sse = solve(fit.decay_rate, coef);
    fit.baseline_var = coef(0);
    fit.amplitudes = coef.tail<3>();
    fit.rms_residual = std::sqrt(sse / static_cast<double>(n));
    return fit;
}

} // namespace levsq
