#pragma once

// Analytic covariance propagation for a thermal state through one squeezing
// pulse, including a pulse-duration-independent dephasing of the pulse mode.
// Convention: sigma = [[2<X^2>, <XP+PX>], [<XP+PX>, 2<P^2>]], vacuum = identity.

#include <cmath>

#include <Eigen/Dense>

#include "levsq/constants.hpp"
#include "levsq/errors.hpp"
#include "levsq/squeeze_core.hpp"

namespace levsq {

struct CovarianceState {
    Eigen::Matrix2d sigma = Eigen::Matrix2d::Identity();
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();

    // eigenvalues, ascending
    Eigen::Vector2d eigenvalues() const {
        const double half_tr = 0.5 * sigma.trace();
        const double d = 0.5 * (sigma(0, 0) - sigma(1, 1));
        const double rad = std::hypot(d, 0.5 * (sigma(0, 1) + sigma(1, 0)));
        return {half_tr - rad, half_tr + rad};
    }

    bool is_symmetric(double tol = 1e-12) const {
        return std::abs(sigma(0, 1) - sigma(1, 0)) <= tol * std::max(1.0, sigma.cwiseAbs().maxCoeff());
    }

    bool is_positive_definite() const { return is_symmetric(1e-9) && eigenvalues()(0) > 0.0; }

    // isotropic with no correlation, up to relative tolerance
    bool is_thermal(double rel_tol = 1e-9) const {
        const double scale = 0.5 * std::abs(sigma.trace());
        return std::abs(sigma(0, 0) - sigma(1, 1)) <= rel_tol * scale
               && std::abs(sigma(0, 1)) <= rel_tol * scale && std::abs(sigma(1, 0)) <= rel_tol * scale;
    }
};

struct ThermalParams {
    double occupancy = 0.0;

    void validate() const {
        if (!(occupancy >= 0.0)) throw DomainError("thermal occupancy must be >= 0");
    }
};

struct DephasingModel {
    double eta = 1.0; // residual phase coherence of <b^2>

    void validate() const {
        if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("eta must lie in [0, 1]");
    }

    // std of a zero-mean Gaussian phase kick phi with <exp(2 i phi)> = eta
    double jitter_std() const {
        validate();
        if (eta == 0.0) return INFINITY;
        return std::sqrt(-std::log(eta) / 2.0);
    }

    static DephasingModel from_jitter_std(double std_rad) {
        if (!(std_rad >= 0.0)) throw DomainError("jitter std must be >= 0");
        return {std::exp(-2.0 * std_rad * std_rad)};
    }
};

// Bose occupancy 1 / (exp(hbar w / kB T) - 1).
inline double thermal_occupancy(double omega, double temperature) {
    if (!(omega > 0.0) || !(temperature > 0.0))
        throw DomainError("thermal_occupancy: omega and temperature must be positive");
    const double x = constants::hbar * omega / (constants::k_boltzmann * temperature);
    return 1.0 / std::expm1(x);
}

inline CovarianceState initial_thermal(double n1) {
    ThermalParams{n1}.validate();
    CovarianceState s;
    s.sigma = (2.0 * n1 + 1.0) * Eigen::Matrix2d::Identity();
    return s;
}

// Covariance after a pulse of duration tau for a thermal input. Only defined
// for isotropic, uncorrelated input; anything else throws UnsupportedInput.
inline CovarianceState propagate_pulse(const CovarianceState& state, const TrapPair& trap, double tau,
                                       const DephasingModel& deph) {
    trap.validate();
    deph.validate();
    if (!(tau >= 0.0)) throw DomainError("propagate_pulse: tau must be >= 0");
    if (!state.is_thermal())
        throw UnsupportedInput("propagate_pulse: closed form holds only for thermal (isotropic) input");

    const double n = 0.5 * state.sigma.trace();
    const double w1 = trap.omega1;
    const double w2 = trap.omega2;
    const double c = deph.eta * std::cos(2.0 * w2 * tau);
    const double s = deph.eta * std::sin(2.0 * w2 * tau);
    const double r2 = (w1 * w1) / (w2 * w2);

    CovarianceState out;
    out.sigma(0, 0) = n * (0.5 * (1.0 + c) + r2 * 0.5 * (1.0 - c));
    out.sigma(1, 1) = n * (0.5 * (1.0 + c) + 0.5 * (1.0 - c) / r2);
    out.sigma(0, 1) = n * s * (w1 * w1 - w2 * w2) / (2.0 * w1 * w2);
    out.sigma(1, 0) = out.sigma(0, 1);
    out.mean = pulse_map(trap, tau).m * state.mean;
    return out;
}

inline double mu_min(const CovarianceState& state) { return state.eigenvalues()(0); }

// -(1/2) 10 log10(mu_min / (2 N1 + 1))
inline double squeezing_db_noisy(const CovarianceState& state_after, double n1) {
    ThermalParams{n1}.validate();
    return -5.0 * std::log10(mu_min(state_after) / (2.0 * n1 + 1.0));
}

// Weak-damping relaxation: rotation at omega1 with the excess over the thermal
// covariance decaying as exp(-gamma t) (gamma is the velocity damping rate) and
// the mean amplitude as exp(-gamma t / 2).
inline CovarianceState relax_toward_thermal(const CovarianceState& state, double omega1, double gamma, double n1,
                                            double t) {
    if (!(gamma >= 0.0) || !(t >= 0.0)) throw DomainError("relax_toward_thermal: gamma and t must be >= 0");
    const CovarianceState thermal = initial_thermal(n1);
    const Eigen::Matrix2d rot = free_rotation(omega1, t).m;
    const double decay = std::exp(-gamma * t);

    CovarianceState out;
    out.sigma = rot * (state.sigma - thermal.sigma) * rot.transpose() * decay + thermal.sigma;
    out.sigma = 0.5 * (out.sigma + out.sigma.transpose()).eval();
    out.mean = rot * state.mean * std::exp(-0.5 * gamma * t);
    return out;
}

} // namespace levsq
