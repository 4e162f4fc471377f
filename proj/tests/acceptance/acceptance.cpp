// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "levsq/constants.hpp"
#include "levsq/gaussian_model.hpp"
#include "levsq/io/config.hpp"
#include "levsq/io/pipeline.hpp"
#include "levsq/langevin.hpp"
#include "levsq/model_fit.hpp"
#include "levsq/phase_space.hpp"
#include "levsq/spectral.hpp"
#include "levsq/squeeze_core.hpp"

namespace fs = std::filesystem;
using namespace levsq;

namespace {

constexpr double two_pi = constants::two_pi;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

io::ExperimentConfig replica() { return io::load_config(std::string(LEVSQ_SOURCE_DIR) + "/configs/paper_replica.cfg"); }

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("levsq_acceptance_" + name);
    fs::remove_all(p);
    return p;
}

Outcome lambda_max_analytic() {
    const double l = lambda_max({two_pi * 112e3, two_pi * 49.3e3});
    return {std::abs(l - 3.56) <= 0.01, fmt("lambda_max = %.4f dB (target 3.56 +- 0.01)", l)};
}

Outcome noise_model_peak() {
    const TrapPair trap{two_pi * 112e3, two_pi * 47.9e3};
    const double l = model_lambda(optimal_tau(trap), trap.omega1, trap.omega2, 0.73);
    return {std::abs(l - 2.66) <= 0.01 && std::abs(l - 2.7) <= 0.1,
            fmt("model lambda at omega2 tau = pi/2, eta = 0.73: %.4f dB (target 2.66, within 0.1 of 2.7)", l)};
}

// Ensemble covariance (vacuum = 1 units) a short free-rotation gap after each
// pulse, compared entrywise with the analytic oracle. Off-diagonal tolerance
// is relative to sqrt(s11 s22).
Outcome covariance_equivalence(double jitter_std, double eta) {
    const TrapPair trap{two_pi * 112e3, two_pi * 49.3e3};
    SimulationParams p;
    p.particle = {32e-9, 3.1e-19, std::nullopt};
    p.temperature = 300.0;
    p.gamma = 0.0;
    p.pre_pulse = 20e-6;
    p.jitter_std = jitter_std;
    const double dt = 0.5e-6, gap = 10e-6;
    const std::size_t n_traces = 2000;
    const std::uint64_t seed = 1;
    const double thermal = 2.0 * constants::k_boltzmann * p.temperature / (constants::hbar * trap.omega1);

    double worst = 0.0, worst_sampled = 0.0;
    std::string worst_at;
    for (int k = 0; k < 12; ++k) {
        const double tau = constants::pi / trap.omega2 * k / 11.0;
        const PulseSchedule sched = PulseSchedule::single(trap, tau);
        const TrajectoryEnsemble ens = run_ensemble(p, sched, n_traces, p.pre_pulse + tau + gap + 5e-6, dt, seed);
        const std::size_t idx = ens.index_at(tau + gap);
        const double t_gap = ens.time(idx) - tau;
        const CovarianceState mc = cloud_covariance(phase_space_cloud_at(ens, idx, p.particle.mass, trap.omega1));

        const Eigen::Matrix2d rot = free_rotation(trap.omega1, t_gap).m;
        const CovarianceState at_end = propagate_pulse(initial_thermal(0.5 * (thermal - 1.0)), trap, tau, {eta});
        const Eigen::Matrix2d oracle = rot * at_end.sigma * rot.transpose();

        // diagnostic only: the same map applied to the ensemble's own pre-pulse covariance
        Eigen::Matrix2d sampled = Eigen::Matrix2d::Zero();
        if (eta == 1.0) {
            const std::size_t k0 = ens.index_at(-5e-6);
            const CovarianceState pre = cloud_covariance(phase_space_cloud_at(ens, k0, p.particle.mass, trap.omega1));
            const Eigen::Matrix2d m = rot * pulse_map(trap, tau).m * free_rotation(trap.omega1, -ens.time(k0)).m;
            sampled = m * pre.sigma * m.transpose();
        }

        for (int i = 0; i < 2; ++i)
            for (int j = i; j < 2; ++j) {
                const double scale = std::sqrt(oracle(i, i) * oracle(j, j));
                const double err = std::abs(mc.sigma(i, j) - oracle(i, j)) / scale;
                if (err > worst) {
                    worst = err;
                    worst_at = fmt("tau = %.3g us, entry (%d,%d)", tau * 1e6, i, j);
                }
                if (eta == 1.0)
                    worst_sampled = std::max(worst_sampled, std::abs(mc.sigma(i, j) - sampled(i, j)) / scale);
            }
    }
    std::string detail = fmt("max entrywise error %.2f%% at %s (tolerance 5%%)", 100.0 * worst, worst_at.c_str());
    if (eta == 1.0) detail += fmt("; against the sampled pre-pulse covariance: %.1e", worst_sampled);
    return {worst <= 0.05, detail};
}

Outcome fig4a_replica() {
    io::ExperimentConfig cfg = replica();
    const nlohmann::json s = io::cmd_reproduce("fig4a", cfg, scratch("fig4a"));
    const double eta = s["fit"]["eta"], w2 = s["fit"]["omega2_rad_s"];
    const double eta_in = cfg.eta(), w2_in = cfg.omega2;
    const double dw = std::abs(w2 / w2_in - 1.0);
    const bool ok = cfg.fig4a_n_taus >= 10 && std::abs(eta - eta_in) <= 0.10 && dw <= 0.03;
    return {ok, fmt("%zu taus: eta %.3f (injected %.3f), omega2 %.2f kHz x 2pi (injected %.2f, off by %.2f%%), fitted peak %.2f dB",
                    cfg.fig4a_n_taus, eta, eta_in, w2 / two_pi / 1e3, w2_in / two_pi / 1e3, 100.0 * dw,
                    s["fit_peak_lambda_db"].get<double>())};
}

Outcome thermalization() {
    io::ExperimentConfig cfg = replica();
    cfg.n_traces = 10000; // see README: the envelope-rate scatter at 2000 traces is ~3.4%
    const nlohmann::json s = io::cmd_reproduce("fig1c", cfg, scratch("fig1c"));
    const auto& rel = s["analysis"]["relaxation"];
    const double rate = rel["decay_rate_rad_s"], g = cfg.resolved_gamma();
    const double err = std::abs(rate / g - 1.0);
    return {err <= 0.05, fmt("envelope decay %.1f Hz x 2pi vs injected %.1f Hz x 2pi (%.2f%%, tolerance 5%%)",
                             rate / two_pi, g / two_pi, 100.0 * err)};
}

Outcome lorentzian_round_trip() {
    io::ExperimentConfig cfg = replica();
    // pressure chosen so the gas-collision formula gives the injected damping
    const double target = two_pi * 227.0;
    cfg.gas.pressure *= target / gas_damping(cfg.particle, cfg.gas);
    cfg.gamma.reset();
    cfg.particle.density = cfg.particle.mass / (4.0 / 3.0 * constants::pi * std::pow(cfg.particle.radius, 3));
    const nlohmann::json s = io::cmd_reproduce("fig4b", cfg, scratch("fig4b"));
    const double w0 = s["fit"]["center_rad_s"], g = s["fit"]["gamma_rad_s"], r = s["fit"]["radius_m"];
    const double ew = std::abs(w0 / cfg.omega1 - 1.0), eg = std::abs(g / target - 1.0),
                 er = std::abs(r / cfg.particle.radius - 1.0);
    return {ew <= 0.05 && eg <= 0.05 && er <= 0.10,
            fmt("omega0 off %.3f%%, Gamma %.1f Hz x 2pi (off %.2f%%), radius %.2f nm (off %.2f%%)", 100.0 * ew,
                g / two_pi, 100.0 * eg, r * 1e9, 100.0 * er)};
}

Outcome property_suites() {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> freq(two_pi * 1e3, two_pi * 1e6), unit(0.0, 1.0);
    std::vector<std::string> failures;

    // symplecticity
    double worst_det = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const TrapPair trap{freq(rng), freq(rng)};
        const double tau = unit(rng) * 10.0 / trap.omega2;
        worst_det = std::max(worst_det, std::abs(pulse_map(trap, tau).det() - 1.0));
    }
    if (worst_det > 1e-12) failures.push_back(fmt("det error %.2e", worst_det));

    // periodicity and rotation invariance of lambda
    double worst_period = 0.0, worst_rot = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const TrapPair trap{freq(rng), freq(rng)};
        const double tau = unit(rng) * 4.0 / trap.omega2;
        const double l = squeezing_db(pulse_map(trap, tau));
        worst_period = std::max(worst_period, std::abs(squeezing_db(pulse_map(trap, tau + constants::pi / trap.omega2)) - l));
        const QuadratureMap a = free_rotation(trap.omega1, unit(rng) * 10.0 / trap.omega1);
        const QuadratureMap b = free_rotation(trap.omega1, unit(rng) * 10.0 / trap.omega1);
        worst_rot = std::max(worst_rot, std::abs(squeezing_db(a.then(pulse_map(trap, tau)).then(b)) - l));
    }
    if (worst_period > 1e-9) failures.push_back(fmt("periodicity error %.2e dB", worst_period));
    if (worst_rot > 1e-9) failures.push_back(fmt("rotation invariance error %.2e dB", worst_rot));

    // equipartition in the thermal steady state
    {
        SimulationParams p;
        p.particle = {32e-9, 3.1e-19, std::nullopt};
        p.gamma = two_pi * 227.0;
        const double w1 = two_pi * 112e3;
        PulseSchedule idle;
        idle.trap = {w1, two_pi * 49.3e3};
        idle.segments = {{SegmentKind::gap, 0.0}};
        const std::size_t n = 4000;
        const TrajectoryEnsemble ens = run_ensemble(p, idle, n, 1e-3, 0.5e-6, 99);
        double z2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) z2 += std::pow(ens.trace(i)[ens.n_samples - 1], 2);
        z2 /= static_cast<double>(n);
        const double expect = constants::k_boltzmann * p.temperature / (p.particle.mass * w1 * w1);
        const double se = expect * std::sqrt(2.0 / static_cast<double>(n));
        if (std::abs(z2 - expect) > 3.0 * se) failures.push_back(fmt("equipartition off by %.2f SE", (z2 - expect) / se));
    }

    // Parseval for the Welch estimate
    {
        std::normal_distribution<double> normal;
        std::vector<double> x(1 << 16);
        double ar = 0.0;
        for (double& v : x) v = ar = 0.9 * ar + normal(rng);
        double var = 0.0, mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(x.size());
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(x.size());
        const PowerSpectrum ps = welch_psd(x, 1e-6, 4096, 0.5);
        const double rel = std::abs(ps.integrated_power() / var - 1.0);
        if (rel > 0.05) failures.push_back(fmt("Parseval off by %.2f%%", 100.0 * rel));
    }

    // positive-definiteness through every covariance operation
    {
        int bad = 0;
        for (int i = 0; i < 2000; ++i) {
            const TrapPair trap{freq(rng), freq(rng)};
            const double n1 = 1e3 * unit(rng);
            const CovarianceState after =
                propagate_pulse(initial_thermal(n1), trap, unit(rng) * 4.0 / trap.omega2, {unit(rng)});
            const CovarianceState relaxed =
                relax_toward_thermal(after, trap.omega1, 1e-3 * trap.omega1, n1, unit(rng) * 1e3 / trap.omega1);
            if (!after.is_positive_definite() || !relaxed.is_positive_definite()) ++bad;
        }
        if (bad) failures.push_back(fmt("%d states lost positive-definiteness", bad));
    }

    std::string detail = fmt("max |det - 1| = %.1e over 1e4 maps; periodicity %.1e dB; rotation %.1e dB", worst_det,
                             worst_period, worst_rot);
    for (const auto& f : failures) detail += "; FAILED: " + f;
    return {failures.empty(), detail};
}

} // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const double eta = 0.73;
    const std::vector<Criterion> criteria{
        {1, "lambda_max analytic", lambda_max_analytic},
        {2, "noise-model peak", noise_model_peak},
        {3, "oracle equivalence (eta = 1, Gamma = 0)", [] { return covariance_equivalence(0.0, 1.0); }},
        {4, "dephasing equivalence (eta = 0.73)",
         [eta] { return covariance_equivalence(DephasingModel{eta}.jitter_std(), eta); }},
        {5, "end-to-end squeezing-curve replica", fig4a_replica},
        {6, "thermalization consistency", thermalization},
        {7, "Lorentzian round trip", lorentzian_round_trip},
        {8, "property suites", property_suites},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %d: %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
