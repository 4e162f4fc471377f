#pragma once

// Zero-phase band-pass: a 4th-order Butterworth band-pass (2nd-order low-pass
// prototype, bilinear transform with pre-warped band edges) applied forward
// and backward. The -3 dB edges of the single pass sit at center +- halfwidth;
// the forward-backward response is |H|^2 with zero phase.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "levsq/constants.hpp"
#include "levsq/errors.hpp"
#include "levsq/langevin.hpp"

namespace levsq {

struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;

    std::complex<double> response(double omega_dt) const {
        const std::complex<double> zi = std::polar(1.0, -omega_dt);
        const std::complex<double> zi2 = zi * zi;
        return (b0 + b1 * zi + b2 * zi2) / (1.0 + a1 * zi + a2 * zi2);
    }
};

struct BandpassFilter {
    std::vector<Biquad> sections;
    double dt = 0.0;
    // envelope decay time of the slowest pole to 1e-3, per pass
    double settle_time = 0.0;

    std::size_t settle_samples() const { return static_cast<std::size_t>(std::ceil(settle_time / dt)); }

    // single-pass complex response at angular frequency omega (rad/s)
    std::complex<double> response(double omega) const {
        std::complex<double> h = 1.0;
        for (const auto& s : sections) h *= s.response(omega * dt);
        return h;
    }
};

inline BandpassFilter design_bandpass(double dt, double center, double halfwidth) {
    if (!(dt > 0.0) || !(halfwidth > 0.0)) throw ConfigError("bandpass: dt and halfwidth must be positive");
    const double lo = center - halfwidth;
    const double hi = center + halfwidth;
    const double nyquist = constants::pi / dt;
    if (!(lo > 0.0) || !(hi < nyquist))
        throw ConfigError("bandpass: band [" + std::to_string(lo) + ", " + std::to_string(hi)
                          + "] rad/s must lie inside (0, Nyquist = " + std::to_string(nyquist) + ")");

    const double k = 2.0 / dt;
    const double wl = k * std::tan(0.5 * lo * dt);
    const double wh = k * std::tan(0.5 * hi * dt);
    const double w0sq = wl * wh;
    const double bw = wh - wl;

    // one prototype pole of each conjugate pair; its mirror gives the conjugate sections
    const std::complex<double> proto = std::polar(1.0, 0.75 * constants::pi);
    const std::complex<double> root = std::sqrt(proto * proto * bw * bw - 4.0 * w0sq);
    const std::complex<double> s_poles[2] = {0.5 * (proto * bw + root), 0.5 * (proto * bw - root)};

    BandpassFilter f;
    f.dt = dt;
    double slowest = INFINITY;
    for (const auto& sp : s_poles) {
        slowest = std::min(slowest, -sp.real());
        const std::complex<double> zp = (1.0 + sp / k) / (1.0 - sp / k);
        Biquad q;
        q.b0 = 1.0;
        q.b1 = 0.0;
        q.b2 = -1.0;
        q.a1 = -2.0 * zp.real();
        q.a2 = std::norm(zp);
        const double g = std::abs(q.response(center * dt));
        q.b0 /= g;
        q.b2 /= g;
        f.sections.push_back(q);
    }
    f.settle_time = std::log(1e3) / slowest;
    return f;
}

namespace detail {

inline void filter_in_place(const std::vector<Biquad>& sections, std::vector<double>& x) {
    for (const auto& s : sections) {
        double z1 = 0.0, z2 = 0.0; // transposed direct form II
        for (double& v : x) {
            const double y = s.b0 * v + z1;
            z1 = s.b1 * v - s.a1 * y + z2;
            z2 = s.b2 * v - s.a2 * y;
            v = y;
        }
    }
}

} // namespace detail

struct FilteredTrace {
    std::vector<double> samples;
    // samples [0, settle) and [size - settle, size) carry edge transients
    std::size_t settle = 0;
};

// Forward-backward application with odd-reflection padding at both ends.
inline std::vector<double> filtfilt(const BandpassFilter& f, std::span<const double> x) {
    const std::size_t n = x.size();
    if (n == 0) return {};
    const std::size_t pad = std::min(n - 1, 3 * f.settle_samples());
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    detail::filter_in_place(f.sections, ext);
    std::reverse(ext.begin(), ext.end());
    detail::filter_in_place(f.sections, ext);
    std::reverse(ext.begin(), ext.end());
    return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

inline FilteredTrace bandpass(std::span<const double> trace, double dt, double center, double halfwidth) {
    const BandpassFilter f = design_bandpass(dt, center, halfwidth);
    return {filtfilt(f, trace), std::min(trace.size(), f.settle_samples())};
}

// Filters every trace and narrows the valid range by the settle window at both ends.
inline TrajectoryEnsemble bandpass_ensemble(const TrajectoryEnsemble& ens, double center, double halfwidth) {
    const BandpassFilter f = design_bandpass(ens.dt, center, halfwidth);
    TrajectoryEnsemble out = ens;
    for (std::size_t i = 0; i < ens.n_traces(); ++i) {
        const auto y = filtfilt(f, ens.trace(i));
        std::copy(y.begin(), y.end(), out.trace(i).begin());
    }
    const std::size_t settle = f.settle_samples();
    out.valid_begin = std::min(ens.n_samples, ens.valid_begin + settle);
    out.valid_end = ens.valid_end > settle ? ens.valid_end - settle : 0;
    if (out.valid_end < out.valid_begin) out.valid_end = out.valid_begin;
    return out;
}

} // namespace levsq
