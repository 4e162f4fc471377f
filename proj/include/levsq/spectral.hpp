#pragma once

// Welch power spectral density and Lorentzian resonance fitting.

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "levsq/constants.hpp"
#include "levsq/errors.hpp"
#include "levsq/least_squares.hpp"

namespace levsq {

struct PowerSpectrum {
    std::vector<double> frequency_hz;
    std::vector<double> density; // one-sided, units^2 / Hz
    std::size_t segments = 0;

    // sum of density * df; equals the (segment-mean-removed) variance
    double integrated_power() const {
        if (frequency_hz.size() < 2) return 0.0;
        const double df = frequency_hz[1] - frequency_hz[0];
        double s = 0.0;
        for (double d : density) s += d * df;
        return s;
    }
};

// Hann-windowed, segment-mean-removed, averaged periodograms.
inline PowerSpectrum welch_psd(std::span<const double> trace, double dt, std::size_t segment_length, double overlap) {
    if (segment_length < 8 || segment_length > trace.size())
        throw DomainError("welch_psd: segment length must be in [8, trace length]");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw DomainError("welch_psd: overlap must be in [0, 1)");
    if (!(dt > 0.0)) throw DomainError("welch_psd: dt must be positive");

    const std::size_t n = segment_length;
    const std::size_t hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * (1.0 - overlap))));
    const std::size_t n_seg = 1 + (trace.size() - n) / hop;

    std::vector<double> window(n);
    double wsum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        window[i] = 0.5 - 0.5 * std::cos(constants::two_pi * static_cast<double>(i) / static_cast<double>(n));
        wsum2 += window[i] * window[i];
    }
    const double fs = 1.0 / dt;
    const std::size_t n_bins = n / 2 + 1;

    Eigen::FFT<double> fft;
    std::vector<double> buf(n);
    std::vector<std::complex<double>> spec;
    PowerSpectrum out;
    out.density.assign(n_bins, 0.0);
    out.frequency_hz.resize(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) out.frequency_hz[k] = static_cast<double>(k) * fs / static_cast<double>(n);

    for (std::size_t s = 0; s < n_seg; ++s) {
        const auto seg = trace.subspan(s * hop, n);
        double mean = 0.0;
        for (double v : seg) mean += v;
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) buf[i] = (seg[i] - mean) * window[i];
        fft.fwd(spec, buf);
        for (std::size_t k = 0; k < n_bins; ++k) {
            double p = std::norm(spec[k]) / (fs * wsum2);
            if (k != 0 && !(n % 2 == 0 && k == n / 2)) p *= 2.0;
            out.density[k] += p;
        }
    }
    for (double& d : out.density) d /= static_cast<double>(n_seg);
    out.segments = n_seg;
    return out;
}

struct LorentzianFit {
    double center = 0.0;    // rad/s
    double gamma = 0.0;     // rad/s (full width at half maximum in omega)
    double amplitude = 0.0; // density units * (rad/s)^3
    double floor = 0.0;     // density units
    Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero(); // (center, gamma, amplitude, floor)
    int iterations = 0;
    std::string termination;

    double operator()(double omega) const { return lorentzian(omega, center, gamma, amplitude, floor); }

    static double lorentzian(double w, double w0, double g, double a, double fl) {
        const double d = w * w - w0 * w0;
        return a * g / (d * d + g * g * w * w) + fl;
    }

    Eigen::Vector4d standard_errors() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

struct LorentzianGuess {
    double center = 0.0; // 0 = locate from the data
    double gamma = 0.0;
    double amplitude = 0.0;
    double floor = -1.0; // < 0 = estimate
};

inline constexpr double min_peak_to_floor = 3.0;

// Fits S(w) = A G / ((w^2 - w0^2)^2 + G^2 w^2) + floor on log densities.
// `omega` in rad/s. A non-zero guess.center restricts the search to the
// strongest point within +-25% of it.
inline LorentzianFit lorentzian_fit(std::span<const double> omega, std::span<const double> density,
                                    LorentzianGuess guess = {}) {
    if (omega.size() != density.size() || omega.size() < 8) throw DomainError("lorentzian_fit: need >= 8 matched points");
    for (double d : density)
        if (!(d > 0.0)) throw DomainError("lorentzian_fit: densities must be positive");

    bool found = false;
    std::size_t ipk = 0;
    for (std::size_t i = 0; i < omega.size(); ++i) {
        if (guess.center > 0.0 && std::abs(omega[i] - guess.center) > 0.25 * guess.center) continue;
        if (!found || density[i] > density[ipk]) {
            ipk = i;
            found = true;
        }
    }
    if (!found) throw DomainError("lorentzian_fit: no data within 25% of the guessed centre");
    const double peak = density[ipk];
    const double data_floor = *std::min_element(density.begin(), density.end());
    if (peak < min_peak_to_floor * data_floor)
        throw NumericalError("lorentzian_fit: peak/floor = " + std::to_string(peak / data_floor) + " < "
                             + std::to_string(min_peak_to_floor));

    double w0 = guess.center > 0.0 ? guess.center : omega[ipk];
    double g = guess.gamma;
    if (!(g > 0.0)) {
        // half-maximum crossings around the peak
        const double half = 0.5 * (peak + data_floor);
        std::size_t lo = ipk, hi = ipk;
        while (lo > 0 && density[lo] > half) --lo;
        while (hi + 1 < omega.size() && density[hi] > half) ++hi;
        g = std::max(omega[hi] - omega[lo], 2.0 * (omega[1] - omega[0]));
    }
    double fl = guess.floor >= 0.0 ? guess.floor : data_floor;
    double a = guess.amplitude > 0.0 ? guess.amplitude : std::max(peak - fl, peak * 1e-3) * g * w0 * w0;

    // unknowns: log(w0/w0g), log(g/gg), log(a/ag), q with floor = peak * q^2
    const double w0g = w0, gg = g, ag = a;
    auto unpack = [&](const Eigen::VectorXd& x) {
        return Eigen::Vector4d(w0g * std::exp(x(0)), gg * std::exp(x(1)), ag * std::exp(x(2)), peak * x(3) * x(3));
    };
    auto residual = [&](const Eigen::VectorXd& x) {
        const Eigen::Vector4d p = unpack(x);
        Eigen::VectorXd r(static_cast<Eigen::Index>(omega.size()));
        for (std::size_t i = 0; i < omega.size(); ++i)
            r(static_cast<Eigen::Index>(i)) = std::log(LorentzianFit::lorentzian(omega[i], p(0), p(1), p(2), p(3)))
                                              - std::log(density[i]);
        return r;
    };
    Eigen::VectorXd x0(4);
    x0 << 0.0, 0.0, 0.0, std::sqrt(std::max(fl, 0.0) / peak);
    LmOptions opt;
    opt.max_iterations = 500;
    const LmResult lm = levenberg_marquardt(residual, x0, opt);
    if (!lm.converged)
        throw NumericalError("lorentzian_fit did not converge (" + lm.reason + ", " + std::to_string(lm.iterations)
                             + " iterations, cost " + std::to_string(lm.cost) + ")");

    const Eigen::Vector4d p = unpack(lm.x);
    LorentzianFit fit;
    fit.center = p(0);
    fit.gamma = p(1);
    fit.amplitude = p(2);
    fit.floor = p(3);
    fit.iterations = lm.iterations;
    fit.termination = lm.reason;

    // residual-based covariance, mapped through d(physical)/d(x)
    const auto dof = static_cast<double>(std::max<Eigen::Index>(1, lm.residuals.size() - 4));
    const double s2 = lm.residuals.squaredNorm() / dof;
    const Eigen::Matrix4d jtj = lm.jacobian.transpose() * lm.jacobian;
    Eigen::Matrix4d d = Eigen::Matrix4d::Zero();
    d(0, 0) = p(0);
    d(1, 1) = p(1);
    d(2, 2) = p(2);
    d(3, 3) = 2.0 * peak * lm.x(3);
    fit.covariance = d * (s2 * jtj.completeOrthogonalDecomposition().pseudoInverse()) * d.transpose();
    return fit;
}

} // namespace levsq
