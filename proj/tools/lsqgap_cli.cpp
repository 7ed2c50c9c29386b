#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "lsqgap/lsqgap.hpp"

namespace {

std::uint64_t seed_override(std::uint64_t fallback) {
    if (const char* env = std::getenv("LSQGAP_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return fallback;
}

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw lsqgap::IoError("cannot open '" + path + "'");
    nlohmann::json j;
    in >> j;
    return j;
}

int cmd_verify(std::uint64_t seed, double perturb) {
    const auto report = lsqgap::verify_identities(seed, perturb);
    for (const auto& c : report.checks) {
        std::printf("%-28s max_error=%-12.3e tol=%-9.0e %s\n", c.name.c_str(), c.max_error, c.tolerance,
                    c.passed ? "PASS" : "FAIL");
    }
    std::printf("verify: %s (%zu identity groups)\n", report.all_passed() ? "PASS" : "FAIL",
                report.checks.size());
    return report.all_passed() ? 0 : 1;
}

int cmd_run(const std::string& config_path, const std::string& csv_path, const std::string& json_path) {
    auto cfg = lsqgap::config_from_json(load_json(config_path));
    cfg.seed = seed_override(cfg.seed);
    const auto rows = lsqgap::run_experiment(cfg);
    if (!csv_path.empty()) lsqgap::emit(rows, lsqgap::EmitFormat::Csv, csv_path);
    if (!json_path.empty()) lsqgap::emit(rows, lsqgap::EmitFormat::Json, json_path);
    if (csv_path.empty() && json_path.empty()) std::cout << lsqgap::rows_to_csv(rows);
    return 0;
}

int cmd_fit(const std::string& csv_path, const std::string& estimator) {
    std::ifstream in(csv_path);
    if (!in) throw lsqgap::IoError("cannot open '" + csv_path + "'");
    const auto rows = lsqgap::rows_from_csv(in);
    const auto fit = lsqgap::fit_scaling_exponent(rows, estimator);
    std::printf("estimator=%s slope=%.6f intercept=%.6f residual=%.6f rows_used=%d\n", estimator.c_str(),
                fit.slope, fit.intercept, fit.residual, fit.rows_used);
    return 0;
}

int cmd_diagnose(const std::string& config_path, int moment_samples) {
    auto cfg = lsqgap::config_from_json(load_json(config_path));
    cfg.seed = seed_override(cfg.seed);
    for (const auto& [d, n] : cfg.grid) {
        const auto spec = cfg.distribution.instantiate(d);
        const double b = cfg.b_rule.b_for(d);
        const double lambda = cfg.lambda_rule.lambda_for(spec, b);
        const auto rep = lsqgap::diagnose(spec, n, lambda, b, cfg.replicates, moment_samples, cfg.seed);
        nlohmann::json j{{"distribution_tag", spec.tag()},
                         {"d", d},
                         {"n", n},
                         {"b", lsqgap::detail::json_double(b)},
                         {"lambda", lsqgap::detail::json_double(lambda)},
                         {"multiplier_term", rep.multiplier_term},
                         {"effective_dimension", rep.effective_dimension},
                         {"noise_l4_l2", rep.noise_l4_l2},
                         {"design_l4_l2", rep.design_l4_l2},
                         {"leverage_max", rep.leverage_max},
                         {"bound_overlay",
                          {{"shamir_fast", lsqgap::detail::json_double(rep.bound_overlay.shamir_fast)},
                           {"slow_rate", lsqgap::detail::json_double(rep.bound_overlay.slow_rate)},
                           {"localized_upper", lsqgap::detail::json_double(rep.bound_overlay.localized_upper)},
                           {"d32_curve", lsqgap::detail::json_double(rep.bound_overlay.d32_curve)}}}};
        std::cout << j.dump() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constrained least squares vs non-linear predictors: experiment harness"};
    app.require_subcommand(1);

    auto* verify = app.add_subcommand("verify", "run the exact-identity suite");
    std::uint64_t verify_seed = 20240901;
    double perturb = 0.0;
    verify->add_option("--seed", verify_seed, "rng seed");
    verify->add_option("--perturb", perturb, "self-test: perturb the min-norm solution by this amount");

    auto* run = app.add_subcommand("run", "run an experiment sweep from a config file");
    std::string run_config, run_csv, run_json;
    run->add_option("config", run_config, "config json path")->required();
    run->add_option("--csv", run_csv, "write rows as csv");
    run->add_option("--json", run_json, "write rows as json");

    auto* fit = app.add_subcommand("fit", "fit the d-exponent of excess*n from a result csv");
    std::string fit_csv, fit_estimator;
    fit->add_option("csv", fit_csv, "result csv path")->required();
    fit->add_option("--estimator", fit_estimator, "estimator tag to fit")->required();

    auto* diagnose = app.add_subcommand("diagnose", "compute the diagnostics report per grid point");
    std::string diag_config;
    int moment_samples = 20000;
    diagnose->add_option("config", diag_config, "config json path")->required();
    diagnose->add_option("--moment-samples", moment_samples, "samples for the moment-equivalence ratios");

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) return cmd_verify(seed_override(verify_seed), perturb);
        if (run->parsed()) return cmd_run(run_config, run_csv, run_json);
        if (fit->parsed()) return cmd_fit(fit_csv, fit_estimator);
        if (diagnose->parsed()) return cmd_diagnose(diag_config, moment_samples);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
