#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "fedfluence/experiments.hpp"

namespace fedfluence {

// Pinned pass/fail thresholds for the preset-level checks.
inline constexpr double kCorrelationFloor = 0.8;
inline constexpr int kCorrelationSeeds = 3;
inline constexpr double kGrowthRatioCap = 4.0;
inline constexpr double kBlowupEpsFloor = 1e6;
inline constexpr double kLwetCombMultiple = 10.0;

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Runs the experiment a config describes and returns its result table plus
// any side artifact (the diagnostics state history).
struct ExperimentResult {
    ResultTable table;
    std::string extra_artifact;
    std::string extra_artifact_suffix;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    ExperimentResult result;
    switch (cfg.kind) {
        case ExperimentKind::fip_error:
            result.table = run_fip_error(cfg).table;
            break;
        case ExperimentKind::fil_correlation:
            result.table = run_fil_correlation(cfg).table;
            break;
        case ExperimentKind::valuation:
            result.table = run_valuation(cfg).table;
            break;
        case ExperimentKind::cleansing:
            result.table = run_cleansing(cfg).table;
            break;
        case ExperimentKind::diagnostics: {
            auto outcome = run_diagnostics(cfg);
            result.table = std::move(outcome.table);
            result.extra_artifact = std::move(outcome.state_history);
            result.extra_artifact_suffix = ".state.tsv";
            break;
        }
    }
    return result;
}

namespace detail {

inline std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline double least_squares_slope(const std::vector<double>& ys) {
    const int n = static_cast<int>(ys.size());
    double sx = 0.0, sy = 0.0, sxy = 0.0, sxx = 0.0;
    for (int t = 1; t <= n; ++t) {
        sx += t;
        sy += ys[static_cast<std::size_t>(t - 1)];
        sxy += t * ys[static_cast<std::size_t>(t - 1)];
        sxx += static_cast<double>(t) * t;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace detail

// Final-round correlation between estimated and exact influence-on-loss,
// repeated over independent data seeds; each seed must clear the floor.
inline CheckResult check_convex_correlation(const ExperimentConfig& base) {
    CheckResult result{"convex correlation >= " + detail::fmt(kCorrelationFloor), true, ""};
    ExperimentConfig cfg = base;
    cfg.kind = ExperimentKind::fil_correlation;
    for (int offset = 0; offset < kCorrelationSeeds; ++offset) {
        ExperimentConfig c = cfg;
        c.data.data_seed += static_cast<std::uint64_t>(offset);
        const auto outcome = run_fil_correlation(c);
        if (!result.detail.empty()) result.detail += ", ";
        result.detail += "seed+" + std::to_string(offset) + ": r=" +
                         detail::fmt(outcome.final_pearson);
        if (!(outcome.final_pearson >= kCorrelationFloor)) result.pass = false;
    }
    return result;
}

// Error growth under exact Hessians must look at most linear: non-negative
// fitted slope and a sub-exponential late/mid ratio.
inline CheckResult check_error_growth(const ExperimentConfig& base) {
    ExperimentConfig cfg = base;
    cfg.kind = ExperimentKind::fip_error;
    cfg.mode_auto = false;
    cfg.fed.estimator_mode = EstimatorMode::basic;
    cfg.hessian_auto = false;
    cfg.fed.hessian_mode = HessianMode::exact_dense;
    const auto outcome = run_fip_error(cfg);
    const auto mean = outcome.modes.front().mean_delta_by_round();
    const int rounds = static_cast<int>(mean.size());
    const double slope = detail::least_squares_slope(mean);
    const double mid = mean[static_cast<std::size_t>(rounds / 2 - 1)];
    const double last = mean.back();
    const double ratio = mid > 0.0 ? last / mid : 0.0;
    CheckResult result;
    result.name = "error growth sub-exponential (slope >= 0, ratio <= " +
                  detail::fmt(kGrowthRatioCap) + ")";
    result.pass = slope >= 0.0 && ratio <= kGrowthRatioCap;
    result.detail = "slope=" + detail::fmt(slope) + ", delta(T)/delta(T/2)=" +
                    detail::fmt(ratio);
    return result;
}

// Cleansing ordering on mean final loss: removing the least valuable clients
// must beat random removal, which must beat removing the most valuable ones.
inline CheckResult check_cleansing_order(const ExperimentConfig& base) {
    ExperimentConfig cfg = base;
    cfg.kind = ExperimentKind::cleansing;
    cfg.cleansing_strategy = CleansingStrategy::all;
    const auto outcome = run_cleansing(cfg);
    const double lowest = outcome.mean_final_loss.at("remove-lowest");
    const double random = outcome.mean_final_loss.at("random");
    const double highest = outcome.mean_final_loss.at("remove-highest");
    CheckResult result;
    result.name = "cleansing ordering (remove-lowest <= random <= remove-highest)";
    result.pass = lowest <= random && random <= highest && lowest < highest;
    result.detail = "lowest=" + detail::fmt(lowest) + ", random=" + detail::fmt(random) +
                    ", highest=" + detail::fmt(highest);
    return result;
}

struct BlowupCheck {
    CheckResult basic_blowup;
    CheckResult lwet_bounded;
    CheckResult truncation_logged;
    CheckResult delta_ordering;
};

// The truncation necessity story on one shared trajectory: the untreated
// estimator must blow past the floor while the truncated one stays within a
// small multiple of the largest combinatorial term and wins on error from
// the first truncation on.
inline BlowupCheck check_blowup(const ExperimentConfig& base) {
    ExperimentConfig cfg = base;
    cfg.kind = ExperimentKind::fip_error;
    cfg.mode_auto = true;     // both basic and lwet
    cfg.hessian_auto = false; // fisher only at this scale
    cfg.fed.hessian_mode = HessianMode::fisher;
    const auto outcome = run_fip_error(cfg);

    const FipErrorModeSeries* basic = nullptr;
    const FipErrorModeSeries* lwet = nullptr;
    for (const auto& m : outcome.modes) {
        if (m.mode == EstimatorMode::basic) basic = &m;
        if (m.mode == EstimatorMode::lwet) lwet = &m;
    }

    BlowupCheck check;
    check.basic_blowup.name = "basic estimator exceeds " + detail::fmt(kBlowupEpsFloor);
    check.basic_blowup.pass = basic && basic->max_eps_norm > kBlowupEpsFloor;
    check.basic_blowup.detail =
        "max eps norm = " + detail::fmt(basic ? basic->max_eps_norm : 0.0);

    check.lwet_bounded.name = "lwet stays within " + detail::fmt(kLwetCombMultiple) +
                              "x the largest combinatorial term";
    check.lwet_bounded.pass =
        lwet && lwet->max_eps_norm <= kLwetCombMultiple * outcome.max_comb_norm;
    check.lwet_bounded.detail = "max eps norm = " +
                                detail::fmt(lwet ? lwet->max_eps_norm : 0.0) +
                                ", max comb norm = " + detail::fmt(outcome.max_comb_norm);

    check.truncation_logged.name = "lwet logs at least one truncation event";
    check.truncation_logged.pass = lwet && lwet->truncation_events >= 1;
    check.truncation_logged.detail =
        "events = " + std::to_string(lwet ? lwet->truncation_events : 0) +
        ", first at round " + std::to_string(lwet ? lwet->first_truncation_round : -1);

    check.delta_ordering.name = "lwet error <= basic error after first truncation";
    if (basic && lwet && lwet->first_truncation_round >= 1) {
        const auto bd = basic->mean_delta_by_round();
        const auto ld = lwet->mean_delta_by_round();
        bool ok = true;
        std::string bad;
        for (int t = lwet->first_truncation_round + 1;
             t <= static_cast<int>(bd.size()); ++t)
            if (ld[static_cast<std::size_t>(t - 1)] > bd[static_cast<std::size_t>(t - 1)]) {
                ok = false;
                bad = " first violation at t=" + std::to_string(t);
                break;
            }
        check.delta_ordering.pass = ok;
        check.delta_ordering.detail =
            "compared rounds " + std::to_string(lwet->first_truncation_round + 1) + ".." +
            std::to_string(bd.size()) + bad;
    } else {
        check.delta_ordering.pass = false;
        check.delta_ordering.detail = "no truncation observed";
    }
    return check;
}

// Byte-identical result tables across two runs of the same configuration.
inline CheckResult check_determinism(const ExperimentConfig& cfg) {
    const auto a = run_experiment(cfg);
    const auto b = run_experiment(cfg);
    CheckResult result;
    result.name = "deterministic result table";
    result.pass = a.table.to_csv() == b.table.to_csv() &&
                  a.extra_artifact == b.extra_artifact;
    result.detail = result.pass ? "two runs byte-identical"
                                : "runs differ";
    return result;
}

inline std::vector<CheckResult> verify_preset(const ExperimentConfig& cfg) {
    std::vector<CheckResult> results;
    if (cfg.name == "convex-small") {
        results.push_back(check_convex_correlation(cfg));
        results.push_back(check_error_growth(cfg));
        results.push_back(check_cleansing_order(cfg));
    } else if (cfg.name == "blowup-demo") {
        const auto blowup = check_blowup(cfg);
        results.push_back(blowup.basic_blowup);
        results.push_back(blowup.lwet_bounded);
        results.push_back(blowup.truncation_logged);
        results.push_back(blowup.delta_ordering);
    }
    results.push_back(check_determinism(cfg));
    return results;
}

} // namespace fedfluence
