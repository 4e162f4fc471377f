#pragma once

// Fit of the dephased squeezing model lambda(tau; omega2, eta) to measured
// squeezing curves. omega1 is held fixed.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "levsq/errors.hpp"
#include "levsq/gaussian_model.hpp"
#include "levsq/least_squares.hpp"

namespace levsq {

struct SqueezingCurve {
    std::vector<double> taus;          // s
    std::vector<double> lambdas;       // dB
    std::vector<double> uncertainties; // dB; empty = unit weights

    void validate() const {
        if (taus.size() != lambdas.size() || (!uncertainties.empty() && uncertainties.size() != taus.size()))
            throw DomainError("squeezing curve columns have different lengths");
        for (std::size_t i = 1; i < taus.size(); ++i)
            if (!(taus[i] > taus[i - 1])) throw DomainError("squeezing curve taus must be strictly increasing");
        for (double u : uncertainties)
            if (!(u > 0.0)) throw DomainError("squeezing curve uncertainties must be positive");
    }
};

// lambda in dB from the dephased covariance of a thermal state. Independent of n1.
inline double model_lambda(double tau, double omega1, double omega2, double eta, double n1 = 1.0) {
    const CovarianceState after = propagate_pulse(initial_thermal(n1), {omega1, omega2}, tau, {eta});
    return squeezing_db_noisy(after, n1);
}

struct FitInit {
    double omega2 = 0.0; // rad/s, typically the commanded trap setting
    double eta = 0.9;
};

struct FitOptions {
    LmOptions lm{};
    bool multistart = false; // eta grid {0.1, 0.3, 0.5, 0.7, 0.9}, keep the lowest cost
    double bound_margin = 1e-3;
};

struct FitResult {
    double omega2 = 0.0;
    double eta = 0.0;
    double omega2_stderr = 0.0;
    double eta_stderr = 0.0;
    double residual_norm = 0.0;
    std::vector<double> residuals; // weighted, model - data
    int iterations = 0;
    std::string termination;
    bool converged = false;
    bool eta_at_bound = false;
    std::vector<double> cost_history;
};

class FitFailure : public NumericalError {
public:
    FitFailure(const std::string& what, FitResult best) : NumericalError(what), best_(std::move(best)) {}
    const FitResult& best_iterate() const { return best_; }

private:
    FitResult best_;
};

namespace detail {

inline double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double logit(double e) { return std::log(e / (1.0 - e)); }

} // namespace detail

// Bounded damped least squares: omega2 = omega2_init exp(u), eta = logistic(v).
// Standard errors come from s^2 (J^T J)^-1 in (omega2, eta), s^2 = RSS / (n - 2).
inline FitResult fit_squeezing_curve(const SqueezingCurve& curve, double omega1, const FitInit& init,
                                     const FitOptions& options = {}) {
    curve.validate();
    if (curve.taus.size() < 4) throw DomainError("fit_squeezing_curve: need at least 4 points");
    if (!(omega1 > 0.0) || !(init.omega2 > 0.0)) throw DomainError("fit_squeezing_curve: frequencies must be positive");
    if (!(init.eta > 0.0 && init.eta < 1.0)) throw DomainError("fit_squeezing_curve: eta init must lie in (0, 1)");

    const std::size_t n = curve.taus.size();
    const double w2_ref = init.omega2;
    auto weight = [&](std::size_t i) { return curve.uncertainties.empty() ? 1.0 : 1.0 / curve.uncertainties[i]; };

    auto residual_phys = [&](double w2, double eta) {
        Eigen::VectorXd r(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            r(static_cast<Eigen::Index>(i)) = (model_lambda(curve.taus[i], omega1, w2, eta) - curve.lambdas[i]) * weight(i);
        return r;
    };
    const ResidualFn residual = [&](const Eigen::VectorXd& x) {
        return residual_phys(w2_ref * std::exp(x(0)), detail::logistic(x(1)));
    };

    std::vector<double> eta_starts{init.eta};
    if (options.multistart) eta_starts = {0.1, 0.3, 0.5, 0.7, 0.9};

    LmResult best;
    bool have = false;
    for (double e0 : eta_starts) {
        Eigen::VectorXd x0(2);
        x0 << 0.0, detail::logit(e0);
        LmResult r = levenberg_marquardt(residual, x0, options.lm);
        const bool better = !have || (r.converged != best.converged ? r.converged : r.cost < best.cost);
        if (better) {
            best = std::move(r);
            have = true;
        }
    }

    FitResult out;
    out.omega2 = w2_ref * std::exp(best.x(0));
    out.eta = detail::logistic(best.x(1));
    out.iterations = best.iterations;
    out.termination = best.reason;
    out.converged = best.converged;
    out.cost_history = best.cost_history;
    out.residuals.assign(best.residuals.data(), best.residuals.data() + best.residuals.size());
    out.residual_norm = best.residuals.norm();
    out.eta_at_bound = out.eta < options.bound_margin || out.eta > 1.0 - options.bound_margin;

    // covariance in physical parameters
    const ResidualFn phys = [&](const Eigen::VectorXd& p) { return residual_phys(p(0), p(1)); };
    Eigen::VectorXd p(2);
    p << out.omega2, out.eta;
    const double h_eta = std::min(1e-6, 0.5 * std::min(out.eta, 1.0 - out.eta));
    Eigen::MatrixXd j(static_cast<Eigen::Index>(n), 2);
    {
        Eigen::VectorXd a = p, b = p;
        const double h = 1e-6 * out.omega2;
        a(0) += h;
        b(0) -= h;
        j.col(0) = (phys(a) - phys(b)) / (2.0 * h);
        a = p;
        b = p;
        a(1) += h_eta;
        b(1) -= h_eta;
        j.col(1) = (phys(a) - phys(b)) / (2.0 * h_eta);
    }
    const double s2 = best.residuals.squaredNorm() / static_cast<double>(n - 2);
    const Eigen::Matrix2d cov = s2 * (j.transpose() * j).completeOrthogonalDecomposition().pseudoInverse();
    out.omega2_stderr = std::sqrt(std::max(cov(0, 0), 0.0));
    out.eta_stderr = std::sqrt(std::max(cov(1, 1), 0.0));

    if (!out.converged)
        throw FitFailure("fit_squeezing_curve: " + best.reason + " after " + std::to_string(best.iterations)
                             + " iterations (best omega2 = " + std::to_string(out.omega2)
                             + ", eta = " + std::to_string(out.eta) + ")",
                         out);
    return out;
}

} // namespace levsq
