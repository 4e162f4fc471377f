// levsq: simulate, analyze and fit pulsed-trap squeezing experiments.
//
//   levsq simulate      --config c.cfg --out dir [--seed N] [--traces N]
//   levsq analyze       --ensemble dir/ensemble.json --out dir [--config c.cfg]
//   levsq fit-psd       --trace trace.csv --out dir [--config c.cfg]
//   levsq fit-squeezing --curve curve.csv --out dir [--config c.cfg]
//   levsq reproduce     --figure fig4a --config c.cfg --out dir [--seed N] [--traces N]
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "levsq/errors.hpp"
#include "levsq/io/config.hpp"
#include "levsq/io/pipeline.hpp"
#include "levsq/version.hpp"

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> traces;
};

levsq::io::ExperimentConfig resolve(const Common& c) {
    levsq::io::ExperimentConfig cfg = c.config.empty() ? levsq::io::ExperimentConfig{} : levsq::io::load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.traces) cfg.n_traces = *c.traces;
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pulsed-trap squeezing simulator and analysis pipeline"};
    app.set_version_flag("--version", std::string(levsq::version));
    app.require_subcommand(1);

    Common c;
    std::string ensemble, trace, curve, figure;

    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", c.config, "Config file (key = value or JSON)")->check(CLI::ExistingFile);
        if (config_required) opt->required();
        sub->add_option("--out", c.out, "Output directory")->required();
    };
    auto add_overrides = [&](CLI::App* sub) {
        sub->add_option("--seed", c.seed, "Master seed (overrides the config)");
        sub->add_option("--traces", c.traces, "Ensemble size (overrides the config)");
    };

    auto* simulate = app.add_subcommand("simulate", "Simulate a trajectory ensemble");
    add_common(simulate, false);
    add_overrides(simulate);

    auto* analyze = app.add_subcommand("analyze", "Analyze a persisted ensemble");
    add_common(analyze, false);
    analyze->add_option("--ensemble", ensemble, "Ensemble sidecar JSON")->required()->check(CLI::ExistingFile);

    auto* fit_psd = app.add_subcommand("fit-psd", "Welch PSD and Lorentzian fit of a position trace");
    add_common(fit_psd, false);
    fit_psd->add_option("--trace", trace, "CSV with columns t_s,z_m")->required()->check(CLI::ExistingFile);

    auto* fit_sq = app.add_subcommand("fit-squeezing", "Fit omega2 and eta to a squeezing curve");
    add_common(fit_sq, false);
    fit_sq->add_option("--curve", curve, "CSV with columns tau_s,lambda_db[,sigma_db]")->required()->check(CLI::ExistingFile);

    auto* reproduce = app.add_subcommand("reproduce", "Run a figure pipeline end to end");
    add_common(reproduce, false);
    add_overrides(reproduce);
    reproduce->add_option("--figure", figure, "fig1c, fig1d, fig2, fig4a or fig4b")
        ->required()
        ->check(CLI::IsMember(levsq::io::figure_names()));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (simulate->parsed()) {
            const auto side = levsq::io::cmd_simulate(resolve(c), c.out);
            std::cout << side.string() << '\n';
        } else if (analyze->parsed()) {
            std::optional<levsq::io::ExperimentConfig> cfg;
            if (!c.config.empty()) cfg = resolve(c);
            std::cout << levsq::io::cmd_analyze(ensemble, c.out, cfg).dump(2) << '\n';
        } else if (fit_psd->parsed()) {
            std::cout << levsq::io::cmd_fit_psd(trace, c.out, resolve(c)).dump(2) << '\n';
        } else if (fit_sq->parsed()) {
            std::cout << levsq::io::cmd_fit_squeezing(curve, c.out, resolve(c)).dump(2) << '\n';
        } else if (reproduce->parsed()) {
            std::cout << levsq::io::cmd_reproduce(figure, resolve(c), c.out).dump(2) << '\n';
        }
    } catch (const levsq::NumericalError& e) {
        std::cerr << "levsq: numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "levsq: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
