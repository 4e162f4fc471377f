#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "levsq/least_squares.hpp"
#include "levsq/model_fit.hpp"
#include "support.hpp"

namespace levsq {
namespace {

using testing::Gen;
using testing::two_pi;

constexpr double pi = std::numbers::pi;
const double w1 = two_pi * 112e3;
const double w2 = two_pi * 47.9e3;

SqueezingCurve model_curve(double omega2, double eta, std::size_t n, double tau_max) {
    SqueezingCurve c;
    for (std::size_t i = 0; i < n; ++i) {
        const double tau = tau_max * (i + 1.0) / n;
        c.taus.push_back(tau);
        c.lambdas.push_back(model_lambda(tau, w1, omega2, eta));
    }
    return c;
}

TEST(ModelLambda, CoherentOptimalIsLambdaMax) {
    EXPECT_NEAR(model_lambda(pi / (2.0 * w2), w1, w2, 1.0), lambda_max({w1, w2}), 1e-10);
}

TEST(ModelLambda, CoherentZeroDurationIsZero) { EXPECT_NEAR(model_lambda(0.0, w1, w2, 1.0), 0.0, 1e-12); }

TEST(ModelLambda, DephasedZeroDurationIsPositive) {
    // c = eta at tau = 0 leaves residual squeezing of the isotropised part
    EXPECT_GT(model_lambda(0.0, w1, w2, 0.5), 0.0);
}

TEST(ModelLambda, FittedPairAtPaperEta) { EXPECT_NEAR(model_lambda(pi / (2.0 * w2), w1, w2, 0.73), 2.66, 0.05); }

TEST(ModelLambda, IndependentOfOccupancy) {
    Gen g(71);
    for (int i = 0; i < 200; ++i) {
        const double tau = g.uniform(0.0, 2.0 * pi / w2);
        const double eta = g.uniform(0.0, 1.0);
        const double ref = model_lambda(tau, w1, w2, eta, 1.0);
        EXPECT_NEAR(model_lambda(tau, w1, w2, eta, 1e3), ref, 1e-10);
        EXPECT_NEAR(model_lambda(tau, w1, w2, eta, 5.6e7), ref, 1e-10);
    }
}

TEST(ModelLambda, PeriodicInTau) {
    Gen g(72);
    for (int i = 0; i < 200; ++i) {
        const double tau = g.uniform(0.0, pi / w2);
        const double eta = g.uniform(0.0, 1.0);
        EXPECT_NEAR(model_lambda(tau + pi / w2, w1, w2, eta), model_lambda(tau, w1, w2, eta), 1e-9);
    }
}

TEST(FitSqueezingCurve, ExactRecovery) {
    const SqueezingCurve c = model_curve(w2, 0.73, 12, pi / w2);
    const FitResult f = fit_squeezing_curve(c, w1, {two_pi * 49.3e3, 0.9});
    EXPECT_TRUE(f.converged);
    EXPECT_NEAR(f.omega2 / w2, 1.0, 1e-3);
    EXPECT_NEAR(f.eta / 0.73, 1.0, 1e-3);
    EXPECT_LT(f.residual_norm, 1e-6);
    EXPECT_FALSE(f.eta_at_bound);
    EXPECT_EQ(f.residuals.size(), c.taus.size());
}

TEST(FitSqueezingCurve, MultistartRecovery) {
    const SqueezingCurve c = model_curve(w2, 0.4, 16, 1.2 * pi / w2);
    FitOptions opt;
    opt.multistart = true;
    const FitResult f = fit_squeezing_curve(c, w1, {two_pi * 50e3, 0.9}, opt);
    EXPECT_NEAR(f.omega2 / w2, 1.0, 1e-3);
    EXPECT_NEAR(f.eta / 0.4, 1.0, 1e-3);
}

TEST(FitSqueezingCurve, InputValidation) {
    const SqueezingCurve three = model_curve(w2, 0.73, 3, pi / w2);
    EXPECT_THROW(fit_squeezing_curve(three, w1, {w2, 0.9}), DomainError);
    SqueezingCurve unsorted = model_curve(w2, 0.73, 6, pi / w2);
    std::swap(unsorted.taus[1], unsorted.taus[2]);
    EXPECT_THROW(fit_squeezing_curve(unsorted, w1, {w2, 0.9}), DomainError);
    SqueezingCurve dup = model_curve(w2, 0.73, 6, pi / w2);
    dup.taus[3] = dup.taus[2];
    EXPECT_THROW(fit_squeezing_curve(dup, w1, {w2, 0.9}), DomainError);
    SqueezingCurve bad_sigma = model_curve(w2, 0.73, 6, pi / w2);
    bad_sigma.uncertainties.assign(6, 0.1);
    bad_sigma.uncertainties[2] = 0.0;
    EXPECT_THROW(fit_squeezing_curve(bad_sigma, w1, {w2, 0.9}), DomainError);
    const SqueezingCurve ok = model_curve(w2, 0.73, 6, pi / w2);
    EXPECT_THROW(fit_squeezing_curve(ok, w1, {w2, 1.0}), DomainError);
    EXPECT_THROW(fit_squeezing_curve(ok, w1, {0.0, 0.5}), DomainError);
}

TEST(FitSqueezingCurve, ObjectiveDecreasesAcrossAcceptedSteps) {
    Gen g(73);
    for (int rep = 0; rep < 20; ++rep) {
        SqueezingCurve c = model_curve(w2, g.uniform(0.3, 0.95), 15, pi / w2);
        for (double& l : c.lambdas) l += 0.1 * g.normal();
        const FitResult f = fit_squeezing_curve(c, w1, {w2 * g.uniform(0.9, 1.1), 0.9});
        ASSERT_GE(f.cost_history.size(), 2u);
        for (std::size_t i = 1; i < f.cost_history.size(); ++i) EXPECT_LT(f.cost_history[i], f.cost_history[i - 1]);
    }
}

// Monte Carlo calibration: truth inside +-2 reported standard errors for >= 90% of seeded repetitions.
TEST(FitSqueezingCurve, StandardErrorsCoverTruth) {
    Gen g(74);
    const double eta = 0.73, sigma = 0.15;
    int covered_w = 0, covered_e = 0;
    const int reps = 100;
    for (int rep = 0; rep < reps; ++rep) {
        SqueezingCurve c = model_curve(w2, eta, 20, pi / w2);
        for (double& l : c.lambdas) l += sigma * g.normal();
        const FitResult f = fit_squeezing_curve(c, w1, {two_pi * 49.3e3, 0.9});
        covered_w += std::abs(f.omega2 - w2) <= 2.0 * f.omega2_stderr;
        covered_e += std::abs(f.eta - eta) <= 2.0 * f.eta_stderr;
    }
    EXPECT_GE(covered_w, 90);
    EXPECT_GE(covered_e, 90);
}

TEST(FitSqueezingCurve, WeightsChangeTheSolution) {
    Gen g(75);
    SqueezingCurve c = model_curve(w2, 0.73, 12, pi / w2);
    for (double& l : c.lambdas) l += 0.2 * g.normal();
    const FitResult unit = fit_squeezing_curve(c, w1, {w2, 0.9});
    c.uncertainties.assign(12, 0.2);
    const FitResult uniform = fit_squeezing_curve(c, w1, {w2, 0.9});
    // a uniform sigma rescales the residuals but not the solution
    EXPECT_NEAR(uniform.omega2, unit.omega2, 1e-6 * unit.omega2);
    EXPECT_NEAR(uniform.eta, unit.eta, 1e-6);
    c.uncertainties[5] = 0.01;
    const FitResult pinned = fit_squeezing_curve(c, w1, {w2, 0.9});
    EXPECT_LT(std::abs(pinned.residuals[5] * 0.01), std::abs(unit.residuals[5]) + 1e-12);
}

TEST(FitSqueezingCurve, ScaleRobust) {
    // tau x 1e3 with frequencies x 1e-3 describes the same curve
    const SqueezingCurve c = model_curve(w2, 0.6, 12, pi / w2);
    SqueezingCurve slow = c;
    for (double& t : slow.taus) t *= 1e3;
    const FitResult a = fit_squeezing_curve(c, w1, {two_pi * 49e3, 0.9});
    const FitResult b = fit_squeezing_curve(slow, w1 * 1e-3, {two_pi * 49e3 * 1e-3, 0.9});
    EXPECT_NEAR(b.omega2 * 1e3 / a.omega2, 1.0, 1e-6);
    EXPECT_NEAR(b.eta, a.eta, 1e-6);
    for (std::size_t i = 0; i < c.taus.size(); ++i)
        EXPECT_NEAR(model_lambda(slow.taus[i], w1 * 1e-3, b.omega2, b.eta), model_lambda(c.taus[i], w1, a.omega2, a.eta),
                    1e-9);
}

TEST(FitSqueezingCurve, FlagsEtaAtBound) {
    const SqueezingCurve c = model_curve(w2, 1.0, 12, pi / w2);
    FitResult f;
    try {
        f = fit_squeezing_curve(c, w1, {w2, 0.9});
    } catch (const FitFailure& e) {
        f = e.best_iterate();
    }
    EXPECT_TRUE(f.eta_at_bound);
    EXPECT_GT(f.eta, 0.999);
}

TEST(FitSqueezingCurve, IterationBudgetRaisesFitFailureWithBestIterate) {
    const SqueezingCurve c = model_curve(w2, 0.73, 12, pi / w2);
    FitOptions opt;
    opt.lm.max_iterations = 1;
    try {
        fit_squeezing_curve(c, w1, {two_pi * 52e3, 0.3}, opt);
        FAIL() << "expected FitFailure";
    } catch (const FitFailure& e) {
        EXPECT_FALSE(e.best_iterate().converged);
        EXPECT_EQ(e.best_iterate().iterations, 1);
        EXPECT_NE(std::string(e.what()).find("iteration budget"), std::string::npos);
        EXPECT_GT(e.best_iterate().omega2, 0.0);
    }
}

TEST(LeastSquares, ForwardJacobianMatchesCentral) {
    const SqueezingCurve c = model_curve(w2, 0.73, 10, pi / w2);
    const ResidualFn f = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd r(10);
        for (int i = 0; i < 10; ++i) r(i) = model_lambda(c.taus[i], w1, w2 * std::exp(x(0)), 1.0 / (1.0 + std::exp(-x(1))));
        return r;
    };
    Gen g(76);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::VectorXd x(2);
        x << g.uniform(-0.1, 0.1), g.uniform(-2.0, 2.0);
        const Eigen::MatrixXd fwd = forward_jacobian(f, x, f(x), 1e-6);
        const Eigen::MatrixXd ctr = central_jacobian(f, x, 1e-5);
        EXPECT_LT((fwd - ctr).cwiseAbs().maxCoeff(), 1e-4 * std::max(1.0, ctr.cwiseAbs().maxCoeff()));
    }
}

TEST(LeastSquares, SolvesRosenbrock) {
    const ResidualFn f = [](const Eigen::VectorXd& x) {
        Eigen::VectorXd r(2);
        r << 10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0);
        return r;
    };
    Eigen::VectorXd x0(2);
    x0 << -1.2, 1.0;
    const LmResult r = levenberg_marquardt(f, x0);
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.x(0), 1.0, 1e-6);
    EXPECT_NEAR(r.x(1), 1.0, 1e-6);
}

} // namespace
} // namespace levsq
