// fedfluence: config-driven federated-learning influence experiments.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "fedfluence/experiments.hpp"
#include "fedfluence/presets.hpp"
#include "fedfluence/verify.hpp"

namespace {

using namespace fedfluence;

// A config argument may be a file path or the name of a built-in preset.
ExperimentConfig resolve_config(const std::string& arg) {
    if (std::filesystem::exists(arg)) return load_experiment_config(arg);
    if (const auto* preset = find_preset(arg))
        return parse_experiment_config(std::string(preset->text));
    throw ConfigError("no such config file or preset: " + arg);
}

const char* kind_name(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::fip_error: return "fip-error";
        case ExperimentKind::fil_correlation: return "fil-correlation";
        case ExperimentKind::valuation: return "valuation";
        case ExperimentKind::cleansing: return "cleansing";
        case ExperimentKind::diagnostics: return "diagnostics";
    }
    return "?";
}

struct CliFlags {
    std::string out;
    int workers = -1;
    int oracle_cap = -2; // -2 = not given (-1 is a meaningful value)
    std::string mode;
    std::string hessian;
};

void apply_flags(ExperimentConfig& cfg, const CliFlags& flags) {
    if (!flags.out.empty()) cfg.output = flags.out;
    if (flags.workers >= 1) cfg.workers = flags.workers;
    if (flags.oracle_cap != -2) cfg.oracle_cap = flags.oracle_cap;
    if (!flags.mode.empty()) {
        cfg.mode_auto = false;
        if (flags.mode == "basic") cfg.fed.estimator_mode = EstimatorMode::basic;
        else if (flags.mode == "lwet") cfg.fed.estimator_mode = EstimatorMode::lwet;
        else if (flags.mode == "lwet-fine") cfg.fed.estimator_mode = EstimatorMode::lwet_fine;
        else throw ConfigError("--mode must be basic, lwet or lwet-fine");
    }
    if (!flags.hessian.empty()) {
        cfg.hessian_auto = false;
        if (flags.hessian == "exact") cfg.fed.hessian_mode = HessianMode::exact_dense;
        else if (flags.hessian == "fisher") cfg.fed.hessian_mode = HessianMode::fisher;
        else throw ConfigError("--hessian must be exact or fisher");
    }
}

int cmd_run(const std::string& config_arg, const CliFlags& flags) {
    ExperimentConfig cfg = resolve_config(config_arg);
    apply_flags(cfg, flags);

    const auto result = run_experiment(cfg);
    std::string out_path = cfg.output;
    if (out_path.empty())
        out_path = std::string(kind_name(cfg.kind)) + ".csv";
    result.table.write(out_path);
    if (!result.extra_artifact.empty()) {
        const std::string extra_path = out_path + result.extra_artifact_suffix;
        std::ofstream extra(extra_path, std::ios::binary);
        if (!extra) throw FormatError("cannot open " + extra_path);
        extra << result.extra_artifact;
        std::cout << "wrote " << extra_path << "\n";
    }
    std::cout << "experiment: " << kind_name(cfg.kind);
    if (!cfg.name.empty()) std::cout << " (" << cfg.name << ")";
    std::cout << "\nconfig hash: " << result.table.config_hash << "\nrows: "
              << result.table.rows.size() << "\nwrote " << out_path << "\n";
    return 0;
}

int cmd_presets() {
    for (const auto& preset : builtin_presets())
        std::cout << preset.name << "\n    " << preset.description
                  << "\n    (also shipped as presets/" << preset.name << ".cfg)\n";
    return 0;
}

int cmd_verify(const std::string& config_arg, const CliFlags& flags) {
    ExperimentConfig cfg = resolve_config(config_arg);
    apply_flags(cfg, flags);
    const auto results = verify_preset(cfg);
    bool all_pass = true;
    for (const auto& check : results) {
        std::cout << (check.pass ? "[PASS] " : "[FAIL] ") << check.name;
        if (!check.detail.empty()) std::cout << " -- " << check.detail;
        std::cout << "\n";
        all_pass = all_pass && check.pass;
    }
    std::cout << (all_pass ? "all checks passed" : "some checks FAILED") << "\n";
    return all_pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated-learning simulator with per-client influence estimation"};
    app.require_subcommand(1);

    CliFlags flags;
    std::string config_arg;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("config", config_arg, "config file path or preset name")->required();
        cmd->add_option("--out", flags.out, "output CSV path (overrides the config)");
        cmd->add_option("--workers", flags.workers, "worker threads for oracle/estimator");
        cmd->add_option("--oracle-cap", flags.oracle_cap,
                        "max clients evaluated by the leave-one-out oracle (-1 = default rule)");
        cmd->add_option("--mode", flags.mode, "estimator mode: basic | lwet | lwet-fine");
        cmd->add_option("--hessian", flags.hessian, "hessian path: exact | fisher");
    };

    auto* run_cmd = app.add_subcommand("run", "run the experiment a config describes");
    add_common(run_cmd);
    auto* presets_cmd = app.add_subcommand("presets", "list built-in presets");
    auto* verify_cmd =
        app.add_subcommand("verify", "run the acceptance checks for a preset config");
    add_common(verify_cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) return cmd_run(config_arg, flags);
        if (presets_cmd->parsed()) return cmd_presets();
        if (verify_cmd->parsed()) return cmd_verify(config_arg, flags);
    } catch (const fedfluence::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const fedfluence::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const fedfluence::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const fedfluence::OverflowError& e) {
        std::cerr << "overflow: " << e.what() << "\n";
        return 3;
    } catch (const fedfluence::CapacityError& e) {
        std::cerr << "capacity error: " << e.what() << "\n";
        return 4;
    } catch (const fedfluence::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
