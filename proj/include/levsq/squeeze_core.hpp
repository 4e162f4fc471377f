#pragma once

// Noiseless pulse algebra for a single motional mode switched between two
// harmonic traps. All maps act on the dimensionless quadratures (X, P) of the
// mode belonging to the first (long-lived) trap frequency omega1.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "levsq/errors.hpp"

namespace levsq {

struct TrapPair {
    double omega1 = 0.0; // rad/s, resting trap
    double omega2 = 0.0; // rad/s, trap during a pulse

    void validate() const {
        if (!(omega1 > 0.0) || !(omega2 > 0.0) || !std::isfinite(omega1) || !std::isfinite(omega2))
            throw DomainError("trap frequencies must be positive and finite");
    }

    // omega2 / omega1
    double ratio() const { return omega2 / omega1; }
};

// Linear map on (X, P)^T. Single-mode symplectic: det == 1.
struct QuadratureMap {
    Eigen::Matrix2d m = Eigen::Matrix2d::Identity();

    static QuadratureMap identity() { return {}; }

    double det() const { return m.determinant(); }

    QuadratureMap then(const QuadratureMap& later) const { return {later.m * m}; }

    QuadratureMap inverse() const {
        // for det == 1 the inverse is the adjugate
        Eigen::Matrix2d inv;
        inv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
        return {inv / det()};
    }

    // row-major 4-element array, used for JSON output
    std::vector<double> row_major() const { return {m(0, 0), m(0, 1), m(1, 0), m(1, 1)}; }
};

enum class SegmentKind { pulse, gap };

struct Segment {
    SegmentKind kind = SegmentKind::pulse;
    double duration = 0.0; // seconds
};

struct PulseSchedule {
    std::vector<Segment> segments;
    TrapPair trap;

    static PulseSchedule single(const TrapPair& trap, double tau) {
        return {{{SegmentKind::pulse, tau}}, trap};
    }

    void validate() const {
        trap.validate();
        if (segments.empty()) throw DomainError("pulse schedule is empty");
        for (const auto& s : segments)
            if (!(s.duration >= 0.0) || !std::isfinite(s.duration))
                throw DomainError("schedule segment durations must be finite and >= 0");
    }

    double total_duration() const {
        double t = 0.0;
        for (const auto& s : segments) t += s.duration;
        return t;
    }
};

inline double squeeze_r(const TrapPair& trap) {
    trap.validate();
    return 0.5 * std::log(trap.omega2 / trap.omega1);
}

inline QuadratureMap free_rotation(double omega, double t) {
    if (!(t >= 0.0)) throw DomainError("free_rotation: t must be >= 0");
    const double c = std::cos(omega * t);
    const double s = std::sin(omega * t);
    QuadratureMap r;
    r.m << c, s, -s, c;
    return r;
}

// Evolution for a time tau in the omega2 trap, expressed in the omega1
// quadratures: X' = X cos + (omega1/omega2) P sin, P' = -(omega2/omega1) X sin + P cos.
inline QuadratureMap pulse_map(const TrapPair& trap, double tau) {
    trap.validate();
    if (!(tau >= 0.0)) throw DomainError("pulse_map: tau must be >= 0");
    const double phase = trap.omega2 * tau;
    const double c = std::cos(phase);
    const double s = std::sin(phase);
    const double e2r = trap.ratio(); // exp(2 r)
    QuadratureMap out;
    out.m << c, s / e2r, -e2r * s, c;
    return out;
}

// Product of the per-segment maps, earliest segment acting first.
inline QuadratureMap compose_schedule(const PulseSchedule& schedule) {
    schedule.validate();
    QuadratureMap total;
    for (const auto& seg : schedule.segments) {
        const QuadratureMap step = seg.kind == SegmentKind::pulse
                                       ? pulse_map(schedule.trap, seg.duration)
                                       : free_rotation(schedule.trap.omega1, seg.duration);
        total = total.then(step);
    }
    return total;
}

// Largest eigenvalue mu of M M^T (the other being 1/mu for a symplectic map).
inline double stretch_eigenvalue(const QuadratureMap& map) {
    const Eigen::Matrix2d s = map.m * map.m.transpose();
    const double half_tr = 0.5 * s.trace();
    const double disc = std::max(half_tr * half_tr - s.determinant(), 0.0);
    return half_tr + std::sqrt(disc);
}

inline constexpr double symplectic_tolerance = 1e-9;

// 10 |log10 sqrt(mu)|, in dB of standard deviation.
inline double squeezing_db(const QuadratureMap& map) {
    if (std::abs(map.det() - 1.0) > symplectic_tolerance)
        throw DomainError("squeezing_db: map is not symplectic (det = " + std::to_string(map.det()) + ")");
    return 5.0 * std::log10(stretch_eigenvalue(map));
}

inline double lambda_max(const TrapPair& trap) {
    trap.validate();
    return 10.0 * std::log10(std::max(trap.omega1, trap.omega2) / std::min(trap.omega1, trap.omega2));
}

inline double optimal_tau(const TrapPair& trap) {
    trap.validate();
    return std::numbers::pi / (2.0 * trap.omega2);
}

} // namespace levsq
