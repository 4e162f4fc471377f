#pragma once

// Shared helpers for the unit tests: a seeded generator of valid inputs and
// oracles that do not go through the library's own formulas.

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "levsq/constants.hpp"
#include "levsq/squeeze_core.hpp"

namespace levsq::testing {

inline constexpr double two_pi = constants::two_pi;

struct Gen {
    std::mt19937_64 rng;

    explicit Gen(std::uint64_t seed) : rng(seed) {}

    double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
    double log_uniform(double a, double b) { return std::exp(uniform(std::log(a), std::log(b))); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }

    // frequencies 2 pi x [1 kHz, 1 MHz], either ordering
    TrapPair trap(double f_lo = 1e3, double f_hi = 1e6) {
        return {two_pi * log_uniform(f_lo, f_hi), two_pi * log_uniform(f_lo, f_hi)};
    }

    double tau(const TrapPair& t) { return uniform(0.0, 4.0 * constants::pi / t.omega2); }
};

// Squeezing in dB from the largest singular value of m (independent of M M^T eigenvalues).
inline double svd_db(const Eigen::Matrix2d& m) {
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(m);
    return 10.0 * std::log10(svd.singularValues()(0));
}

inline double max_abs_diff(const Eigen::Matrix2d& a, const Eigen::Matrix2d& b) { return (a - b).cwiseAbs().maxCoeff(); }

} // namespace levsq::testing
