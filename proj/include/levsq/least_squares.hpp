#pragma once

// Damped least squares (Levenberg-Marquardt): Marquardt-scaled normal
// equations, accept a step only if it lowers the cost, forward-difference
// Jacobians. Unconstrained; callers impose bounds by reparametrisation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace levsq {

struct LmOptions {
    int max_iterations = 200;
    double fd_step = 1e-6;      // relative forward-difference step
    double ftol = 1e-15;        // relative cost reduction
    double xtol = 1e-12;        // relative step size
    double gtol = 1e-14;        // scaled gradient
    double initial_damping = 1e-3;
};

struct LmResult {
    Eigen::VectorXd x;
    Eigen::VectorXd residuals;
    Eigen::MatrixXd jacobian;
    double cost = 0.0; // 0.5 |r|^2
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::string reason;
    std::vector<double> cost_history; // cost after each accepted step, starting with the initial cost
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

inline Eigen::MatrixXd forward_jacobian(const ResidualFn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& fx,
                                        double rel_step) {
    Eigen::MatrixXd j(fx.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x;
        const double h = rel_step * std::max(std::abs(x(i)), 1.0);
        xp(i) += h;
        j.col(i) = (f(xp) - fx) / (xp(i) - x(i));
    }
    return j;
}

inline Eigen::MatrixXd central_jacobian(const ResidualFn& f, const Eigen::VectorXd& x, double rel_step) {
    Eigen::MatrixXd j;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x, xm = x;
        const double h = rel_step * std::max(std::abs(x(i)), 1.0);
        xp(i) += h;
        xm(i) -= h;
        const Eigen::VectorXd d = (f(xp) - f(xm)) / (xp(i) - xm(i));
        if (j.size() == 0) j.resize(d.size(), x.size());
        j.col(i) = d;
    }
    return j;
}

inline LmResult levenberg_marquardt(const ResidualFn& f, Eigen::VectorXd x0, const LmOptions& opt = {}) {
    LmResult res;
    res.x = std::move(x0);
    res.residuals = f(res.x);
    res.evaluations = 1;
    if (!res.residuals.allFinite()) {
        res.reason = "non-finite residuals at the initial point";
        return res;
    }
    res.cost = 0.5 * res.residuals.squaredNorm();
    res.cost_history.push_back(res.cost);
    double lambda = opt.initial_damping;
    const Eigen::Index n = res.x.size();

    for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
        res.jacobian = forward_jacobian(f, res.x, res.residuals, opt.fd_step);
        res.evaluations += static_cast<int>(n);
        const Eigen::MatrixXd jtj = res.jacobian.transpose() * res.jacobian;
        const Eigen::VectorXd g = res.jacobian.transpose() * res.residuals;
        Eigen::VectorXd diag = jtj.diagonal().cwiseMax(1e-12 * std::max(1.0, jtj.diagonal().maxCoeff()));

        if (g.cwiseAbs().cwiseQuotient(diag.cwiseSqrt()).maxCoeff() <= opt.gtol * std::sqrt(2.0 * res.cost + 1e-300)) {
            res.converged = true;
            res.reason = "gradient below tolerance";
            return res;
        }

        bool accepted = false;
        for (int tries = 0; tries < 40 && !accepted; ++tries) {
            Eigen::MatrixXd a = jtj;
            a.diagonal() += lambda * diag;
            const Eigen::VectorXd step = a.ldlt().solve(-g);
            const Eigen::VectorXd trial = res.x + step;
            const Eigen::VectorXd r = f(trial);
            ++res.evaluations;
            const double cost = r.allFinite() ? 0.5 * r.squaredNorm() : INFINITY;
            if (cost < res.cost) {
                const double reduction = (res.cost - cost) / std::max(res.cost, 1e-300);
                const double step_rel = step.norm() / (res.x.norm() + opt.xtol);
                res.x = trial;
                res.residuals = r;
                res.cost = cost;
                res.cost_history.push_back(cost);
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                if (reduction < opt.ftol || step_rel < opt.xtol || cost == 0.0) {
                    res.converged = true;
                    res.reason = cost == 0.0 ? "exact fit" : reduction < opt.ftol ? "cost reduction below tolerance"
                                                                                   : "step below tolerance";
                    ++res.iterations;
                    res.jacobian = forward_jacobian(f, res.x, res.residuals, opt.fd_step);
                    return res;
                }
            } else {
                lambda *= 4.0;
            }
        }
        if (!accepted) {
            // no descent at any damping: local minimum to working precision
            res.converged = true;
            res.reason = "no further descent";
            return res;
        }
    }
    res.reason = "iteration budget exhausted";
    return res;
}

} // namespace levsq
