#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fedfluence/errors.hpp"
#include "fedfluence/experiment_config.hpp"
#include "fedfluence/fedavg.hpp"
#include "fedfluence/influence.hpp"
#include "fedfluence/metrics.hpp"
#include "fedfluence/oracle.hpp"
#include "fedfluence/parallel.hpp"

namespace fedfluence {

struct ResultRow {
    int round = 0;
    int client = -1; // -1 for run-level metrics
    std::string metric;
    double value = 0.0;
};

struct ResultTable {
    std::string config_hash;
    std::vector<ResultRow> rows;

    void add(int round, int client, std::string metric, double value) {
        rows.push_back({round, client, std::move(metric), value});
    }

    std::string to_csv() const {
        std::string out = "# config_hash=" + config_hash + "\n";
        out += "round,client,metric,value\n";
        char buf[64];
        for (const auto& r : rows) {
            out += std::to_string(r.round);
            out += ',';
            out += std::to_string(r.client);
            out += ',';
            out += r.metric;
            std::snprintf(buf, sizeof buf, ",%.17g\n", r.value);
            out += buf;
        }
        return out;
    }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw FormatError("ResultTable: cannot open " + path);
        out << to_csv();
    }
};

namespace detail {

struct PreparedRun {
    ModelSpec spec;
    FederationData data;
    FederationConfig fed;
};

inline PreparedRun prepare_run(const ExperimentConfig& cfg, std::uint64_t data_seed_offset = 0) {
    validate_experiment(cfg);
    PreparedRun run;
    run.data = build_federation_data(cfg, data_seed_offset);
    run.spec = build_model_spec(cfg, run.data);
    run.fed = cfg.fed;
    run.fed.validate(run.data);
    return run;
}

inline EstimatorMode resolved_mode(const ExperimentConfig& cfg) {
    return cfg.mode_auto ? EstimatorMode::lwet : cfg.fed.estimator_mode;
}

inline HessianMode resolved_hessian(const ExperimentConfig& cfg) {
    return cfg.hessian_auto ? HessianMode::fisher : cfg.fed.hessian_mode;
}

inline bool dense_feasible(const ModelSpec& spec, int cap) {
    for (const auto& shape : spec.layout())
        if (shape.size() > cap) return false;
    return true;
}

inline void require_dense_capacity(const ModelSpec& spec, int cap) {
    for (const auto& shape : spec.layout())
        if (shape.size() > cap)
            throw CapacityError("exact-dense estimator requested but a block of size " +
                                std::to_string(shape.size()) + " exceeds the dense cap " +
                                std::to_string(cap));
}

// Clients whose exact influence the oracle will compute: everyone at desk
// scale, otherwise a seeded subset.
inline std::vector<int> evaluated_clients(const ExperimentConfig& cfg) {
    const int k = cfg.fed.clients;
    int cap = cfg.oracle_cap;
    if (cap < 0) cap = k <= 50 ? k : 20;
    if (cap >= k) {
        std::vector<int> all(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) all[static_cast<std::size_t>(i)] = i;
        return all;
    }
    Rng rng(derive_seed(cfg.experiment_seed, SeedStream::oracle_subset));
    return rng.sample_without_replacement(k, cap);
}

inline std::vector<int> auto_evaluation_rounds(int rounds) {
    std::set<int> picks;
    for (int i = 1; i <= 10; ++i) {
        const int r = static_cast<int>(std::lround(rounds * i / 10.0));
        if (r >= 1) picks.insert(r);
    }
    picks.insert(rounds);
    return {picks.begin(), picks.end()};
}

inline std::string mode_label(EstimatorMode mode, HessianMode hessian) {
    std::string out = mode == EstimatorMode::basic ? "basic"
                      : mode == EstimatorMode::lwet ? "lwet"
                                                    : "lwet-fine";
    out += hessian == HessianMode::exact_dense ? "+exact" : "+fisher";
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// fip-error: per-round distance between the exact and estimated parameter
// influence, for every requested estimator mode on one shared trajectory.
// ---------------------------------------------------------------------------

struct FipErrorModeSeries {
    EstimatorMode mode;
    HessianMode hessian;
    std::string label;
    // delta[t-1][i]: estimation error of tracked client i at round t.
    std::vector<std::vector<double>> delta;
    double max_eps_norm = 0.0;
    int first_truncation_round = -1;
    int truncation_events = 0;

    std::vector<double> mean_delta_by_round() const {
        std::vector<double> out;
        out.reserve(delta.size());
        for (const auto& per_client : delta) {
            double mean = 0.0;
            for (double d : per_client) mean += d;
            out.push_back(per_client.empty() ? 0.0 : mean / per_client.size());
        }
        return out;
    }
};

struct FipErrorOutcome {
    ResultTable table;
    std::vector<int> tracked;
    std::vector<FipErrorModeSeries> modes;
    double max_comb_norm = 0.0;
};

inline FipErrorOutcome run_fip_error(const ExperimentConfig& cfg) {
    auto run = detail::prepare_run(cfg);
    FipErrorOutcome outcome;
    outcome.table.config_hash = config_hash(cfg);
    outcome.tracked = detail::evaluated_clients(cfg);

    // Estimator mode product; an explicit setting restricts its axis.
    std::vector<EstimatorMode> modes = cfg.mode_auto
        ? std::vector<EstimatorMode>{EstimatorMode::basic, EstimatorMode::lwet}
        : std::vector<EstimatorMode>{cfg.fed.estimator_mode};
    std::vector<HessianMode> hessians;
    if (cfg.hessian_auto) {
        if (detail::dense_feasible(run.spec, cfg.fed.dense_cap))
            hessians = {HessianMode::exact_dense, HessianMode::fisher};
        else
            hessians = {HessianMode::fisher};
    } else {
        if (cfg.fed.hessian_mode == HessianMode::exact_dense)
            detail::require_dense_capacity(run.spec, cfg.fed.dense_cap);
        hessians = {cfg.fed.hessian_mode};
    }

    // Exact ground truth per tracked client, independent retrainings.
    std::vector<FederationTrajectory> loo(outcome.tracked.size());
    parallel_for(static_cast<int>(outcome.tracked.size()), cfg.workers, [&](int i) {
        loo[static_cast<std::size_t>(i)] = leave_one_out_retrain(
            run.spec, run.data, run.fed, outcome.tracked[static_cast<std::size_t>(i)]);
    });

    struct Engine {
        FederationConfig fed;
        InfluenceState state;
        FipErrorModeSeries series;
    };
    std::vector<Engine> engines;
    bool need_exact = false;
    for (const auto mode : modes)
        for (const auto hessian : hessians) {
            Engine e;
            e.fed = run.fed;
            e.fed.estimator_mode = mode;
            e.fed.hessian_mode = hessian;
            e.state = make_influence_state(run.spec, e.fed);
            e.series.mode = mode;
            e.series.hessian = hessian;
            e.series.label = detail::mode_label(mode, hessian);
            engines.push_back(std::move(e));
            need_exact = need_exact || hessian == HessianMode::exact_dense;
        }

    double max_comb = 0.0;
    RunOptions opts;
    opts.record = need_exact ? RecordKind::gradients_and_exact : RecordKind::gradients;
    opts.keep_records = false;
    opts.workers = 1;
    opts.on_round = [&](const RoundRecord& rec, const LayeredParams& w_prev,
                        const LayeredParams& w_t) {
        const int t = rec.round;
        for (std::size_t i = 0; i < outcome.tracked.size(); ++i) {
            const int c = outcome.tracked[i];
            const double comb_norm =
                l2_norm(combinatorial_influence(rec, c, w_t, w_prev));
            max_comb = std::max(max_comb, comb_norm);
            outcome.table.add(t, c, "comb_norm", comb_norm);
        }
        for (auto& e : engines) {
            e.state = update_influence(e.state, rec, w_t, w_prev, e.fed, cfg.workers);
            std::vector<double> deltas;
            deltas.reserve(outcome.tracked.size());
            for (std::size_t i = 0; i < outcome.tracked.size(); ++i) {
                const int c = outcome.tracked[i];
                const auto eps_exact = sub(loo[i].model_at(t), w_t);
                const double d =
                    estimation_error(eps_exact, e.state.eps[static_cast<std::size_t>(c)]);
                deltas.push_back(d);
                const double eps_norm = l2_norm(e.state.eps[static_cast<std::size_t>(c)]);
                e.series.max_eps_norm = std::max(e.series.max_eps_norm, eps_norm);
                outcome.table.add(t, c, "delta[" + e.series.label + "]", d);
                outcome.table.add(t, c, "eps_norm[" + e.series.label + "]", eps_norm);
            }
            e.series.delta.push_back(std::move(deltas));
        }
    };
    run_federation_ex(run.spec, run.data, run.fed, opts);

    outcome.max_comb_norm = max_comb;
    for (auto& e : engines) {
        e.series.truncation_events = static_cast<int>(e.state.events.size());
        for (const auto& event : e.state.events)
            if (e.series.first_truncation_round < 0 ||
                event.round < e.series.first_truncation_round)
                e.series.first_truncation_round = event.round;
        for (const auto& event : e.state.events)
            outcome.table.add(event.round, event.participant,
                              "truncation[" + e.series.label +
                                  "][layer=" + std::to_string(event.layer) + "]",
                              1.0);
        outcome.modes.push_back(std::move(e.series));
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// fil-correlation: Pearson correlation between estimated and exact influence
// on loss over the evaluated clients, tracked across evaluation rounds.
// ---------------------------------------------------------------------------

struct FilCorrelationOutcome {
    ResultTable table;
    std::vector<int> tracked;
    std::vector<int> eval_rounds;
    // pearson_by_round[i] is NaN when the correlation was undefined.
    std::vector<double> pearson_by_round;
    double final_pearson = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::pair<double, double>> final_scatter; // (estimated, exact)
};

inline FilCorrelationOutcome run_fil_correlation(const ExperimentConfig& cfg) {
    auto run = detail::prepare_run(cfg);
    FilCorrelationOutcome outcome;
    outcome.table.config_hash = config_hash(cfg);
    outcome.tracked = detail::evaluated_clients(cfg);
    outcome.eval_rounds = cfg.evaluation_rounds.empty()
                              ? detail::auto_evaluation_rounds(cfg.fed.rounds)
                              : cfg.evaluation_rounds;

    FederationConfig est_fed = run.fed;
    est_fed.estimator_mode = detail::resolved_mode(cfg);
    est_fed.hessian_mode = detail::resolved_hessian(cfg);
    if (est_fed.hessian_mode == HessianMode::exact_dense)
        detail::require_dense_capacity(run.spec, est_fed.dense_cap);

    std::vector<FederationTrajectory> loo(outcome.tracked.size());
    parallel_for(static_cast<int>(outcome.tracked.size()), cfg.workers, [&](int i) {
        loo[static_cast<std::size_t>(i)] = leave_one_out_retrain(
            run.spec, run.data, run.fed, outcome.tracked[static_cast<std::size_t>(i)]);
    });

    // Full run, streaming the estimator; keep eps snapshots at eval rounds.
    InfluenceState state = make_influence_state(run.spec, est_fed);
    std::map<int, std::vector<LayeredParams>> eps_at; // round -> eps per tracked client
    std::vector<LayeredParams> w_at_eval;
    const std::set<int> eval_set(outcome.eval_rounds.begin(), outcome.eval_rounds.end());

    RunOptions opts;
    opts.record = est_fed.hessian_mode == HessianMode::exact_dense
                      ? RecordKind::gradients_and_exact
                      : RecordKind::gradients;
    opts.keep_records = false;
    opts.on_round = [&](const RoundRecord& rec, const LayeredParams& w_prev,
                        const LayeredParams& w_t) {
        state = update_influence(state, rec, w_t, w_prev, est_fed, cfg.workers);
        if (eval_set.count(rec.round)) {
            auto& snap = eps_at[rec.round];
            snap.reserve(outcome.tracked.size());
            for (int c : outcome.tracked)
                snap.push_back(state.eps[static_cast<std::size_t>(c)]);
        }
    };
    const auto full = run_federation_ex(run.spec, run.data, run.fed, opts);

    for (const int r : outcome.eval_rounds) {
        const auto& w_r = full.model_at(r);
        const double base_loss = loss(run.spec, w_r, run.data.test_set);
        std::vector<double> est, exact;
        for (std::size_t i = 0; i < outcome.tracked.size(); ++i) {
            const auto& loo_model = loo[i].model_at(r);
            const double exact_fil = loss(run.spec, loo_model, run.data.test_set) - base_loss;
            double est_fil;
            if (cfg.self_test) {
                est_fil = fil(run.spec, w_r, sub(loo_model, w_r), run.data.test_set);
            } else {
                est_fil = loss(run.spec, add(w_r, eps_at.at(r)[i]), run.data.test_set) -
                          base_loss;
            }
            est.push_back(est_fil);
            exact.push_back(exact_fil);
            outcome.table.add(r, outcome.tracked[i], "fil_est", est_fil);
            outcome.table.add(r, outcome.tracked[i], "fil_exact", exact_fil);
        }
        double r_value = std::numeric_limits<double>::quiet_NaN();
        bool defined = true;
        try {
            r_value = pearson(est, exact);
        } catch (const CorrelationError&) {
            defined = false; // reported, not fatal
        }
        outcome.pearson_by_round.push_back(r_value);
        outcome.table.add(r, -1, "pearson_defined", defined ? 1.0 : 0.0);
        if (defined) outcome.table.add(r, -1, "pearson", r_value);
        if (r == outcome.eval_rounds.back()) {
            outcome.final_pearson = r_value;
            for (std::size_t i = 0; i < est.size(); ++i)
                outcome.final_scatter.emplace_back(est[i], exact[i]);
        }
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// cleansing / valuation: rank clients by estimated influence at an
// intervention round, remove a fraction per strategy, continue training and
// compare final metrics.
// ---------------------------------------------------------------------------

namespace detail {

struct RankedRun {
    PreparedRun run;
    LayeredParams w_x;        // global model at the intervention round
    std::map<int, double> values; // estimated influence per client at x
    double baseline_final_loss = 0.0;
    double baseline_final_acc = 0.0;
};

inline RankedRun prepare_ranked_run(const ExperimentConfig& cfg, int rep) {
    RankedRun ranked;
    ranked.run = prepare_run(cfg, static_cast<std::uint64_t>(rep));
    const auto& run = ranked.run;
    const int x = cfg.cleansing_round;

    FederationConfig est_fed = run.fed;
    est_fed.estimator_mode = resolved_mode(cfg);
    est_fed.hessian_mode = resolved_hessian(cfg);
    if (est_fed.hessian_mode == HessianMode::exact_dense)
        require_dense_capacity(run.spec, est_fed.dense_cap);

    // Phase 1: rounds 1..x with the estimator streaming along.
    InfluenceState state = make_influence_state(run.spec, est_fed);
    RunOptions phase1;
    phase1.record = est_fed.hessian_mode == HessianMode::exact_dense
                        ? RecordKind::gradients_and_exact
                        : RecordKind::gradients;
    phase1.keep_records = false;
    phase1.end_round = x;
    phase1.on_round = [&](const RoundRecord& rec, const LayeredParams& w_prev,
                          const LayeredParams& w_t) {
        state = update_influence(state, rec, w_t, w_prev, est_fed, cfg.workers);
    };
    const auto head = run_federation_ex(run.spec, run.data, run.fed, phase1);
    ranked.w_x = head.model_at(x);

    for (int c = 0; c < run.fed.clients; ++c) {
        const auto& eps = state.eps[static_cast<std::size_t>(c)];
        ranked.values[c] = cfg.cleansing_metric == ValueMetric::fil
                               ? fil(run.spec, ranked.w_x, eps, run.data.test_set)
                               : fia(run.spec, ranked.w_x, eps, run.data.test_set);
    }

    // Baseline: continue to T with nobody removed.
    RunOptions cont;
    cont.record = RecordKind::none;
    cont.keep_records = false;
    cont.start_round = x;
    cont.w_start = &ranked.w_x;
    const auto tail = run_federation_ex(run.spec, run.data, run.fed, cont);
    ranked.baseline_final_loss = loss(run.spec, tail.models.back(), run.data.test_set);
    ranked.baseline_final_acc = accuracy(run.spec, tail.models.back(), run.data.test_set);
    return ranked;
}

struct FinalMetrics {
    double loss_value = 0.0;
    double acc_value = 0.0;
};

inline FinalMetrics continue_with_removal(const RankedRun& ranked,
                                          const ExperimentConfig& cfg,
                                          const std::set<int>& removed) {
    RunOptions cont;
    cont.record = RecordKind::none;
    cont.keep_records = false;
    cont.start_round = cfg.cleansing_round;
    cont.w_start = &ranked.w_x;
    cont.removed = removed;
    const auto tail =
        run_federation_ex(ranked.run.spec, ranked.run.data, ranked.run.fed, cont);
    FinalMetrics out;
    out.loss_value = loss(ranked.run.spec, tail.models.back(), ranked.run.data.test_set);
    out.acc_value = accuracy(ranked.run.spec, tail.models.back(), ranked.run.data.test_set);
    return out;
}

// Removal sets per strategy. Ranking is valuable-first, so the "lowest"
// strategy (client cleansing) removes from the tail of the ranking.
inline std::set<int> removal_set(const RankedRun& ranked, const ExperimentConfig& cfg,
                                 CleansingStrategy strategy, double fraction, int rep) {
    const int k = ranked.run.fed.clients;
    const int count = static_cast<int>(std::lround(fraction * k));
    if (count >= k) throw ConfigError("cleansing: fraction removes every client");
    if (count <= 0) return {};
    const auto ranking =
        rank_clients(ranked.values, RankDirection::valuable_first, cfg.cleansing_metric);
    std::set<int> removed;
    switch (strategy) {
        case CleansingStrategy::lowest:
            removed.insert(ranking.end() - count, ranking.end());
            break;
        case CleansingStrategy::highest:
            removed.insert(ranking.begin(), ranking.begin() + count);
            break;
        case CleansingStrategy::random: {
            Rng rng(derive_seed(cfg.experiment_seed, SeedStream::experiment,
                                {static_cast<std::uint64_t>(rep)}));
            for (int id : rng.sample_without_replacement(k, count)) removed.insert(id);
            break;
        }
        case CleansingStrategy::all:
            throw ConfigError("cleansing: strategy 'all' is not a removal set");
    }
    return removed;
}

inline const char* strategy_name(CleansingStrategy s) {
    switch (s) {
        case CleansingStrategy::lowest: return "remove-lowest";
        case CleansingStrategy::highest: return "remove-highest";
        case CleansingStrategy::random: return "random";
        case CleansingStrategy::all: return "all";
    }
    return "?";
}

} // namespace detail

struct CleansingOutcome {
    ResultTable table;
    // Means over repeats, keyed by strategy name.
    std::map<std::string, double> mean_final_loss;
    std::map<std::string, double> mean_final_acc;
    double mean_baseline_loss = 0.0;
};

inline CleansingOutcome run_cleansing(const ExperimentConfig& cfg) {
    validate_experiment(cfg);
    CleansingOutcome outcome;
    outcome.table.config_hash = config_hash(cfg);
    const std::vector<CleansingStrategy> strategies =
        cfg.cleansing_strategy == CleansingStrategy::all
            ? std::vector<CleansingStrategy>{CleansingStrategy::lowest,
                                             CleansingStrategy::random,
                                             CleansingStrategy::highest}
            : std::vector<CleansingStrategy>{cfg.cleansing_strategy};
    std::map<std::string, double> loss_total, acc_total;
    double baseline_total = 0.0;
    const int T = cfg.fed.rounds;

    for (int rep = 0; rep < cfg.repeats; ++rep) {
        const auto ranked = detail::prepare_ranked_run(cfg, rep);
        baseline_total += ranked.baseline_final_loss;
        outcome.table.add(T, -1, "final_loss[baseline][rep=" + std::to_string(rep) + "]",
                          ranked.baseline_final_loss);
        for (const auto strategy : strategies) {
            const auto removed =
                detail::removal_set(ranked, cfg, strategy, cfg.cleansing_fraction, rep);
            const auto metrics = detail::continue_with_removal(ranked, cfg, removed);
            const std::string label = detail::strategy_name(strategy);
            loss_total[label] += metrics.loss_value;
            acc_total[label] += metrics.acc_value;
            outcome.table.add(T, -1,
                              "final_loss[" + label + "][rep=" + std::to_string(rep) + "]",
                              metrics.loss_value);
            outcome.table.add(T, -1,
                              "final_acc[" + label + "][rep=" + std::to_string(rep) + "]",
                              metrics.acc_value);
        }
    }
    for (const auto& [label, total] : loss_total) {
        outcome.mean_final_loss[label] = total / cfg.repeats;
        outcome.table.add(T, -1, "final_loss_mean[" + label + "]", total / cfg.repeats);
    }
    for (const auto& [label, total] : acc_total) {
        outcome.mean_final_acc[label] = total / cfg.repeats;
        outcome.table.add(T, -1, "final_acc_mean[" + label + "]", total / cfg.repeats);
    }
    outcome.mean_baseline_loss = baseline_total / cfg.repeats;
    outcome.table.add(T, -1, "final_loss_mean[baseline]", outcome.mean_baseline_loss);
    return outcome;
}

struct ValuationOutcome {
    ResultTable table;
    // mean final loss keyed by (fraction index, strategy name)
    std::map<std::string, std::vector<double>> mean_loss_by_fraction;
    std::vector<double> fractions;
};

inline ValuationOutcome run_valuation(const ExperimentConfig& cfg) {
    validate_experiment(cfg);
    ValuationOutcome outcome;
    outcome.table.config_hash = config_hash(cfg);
    outcome.fractions = cfg.fraction_sweep;
    const std::vector<CleansingStrategy> strategies{
        CleansingStrategy::lowest, CleansingStrategy::random, CleansingStrategy::highest};
    const int T = cfg.fed.rounds;

    for (const auto strategy : strategies)
        outcome.mean_loss_by_fraction[detail::strategy_name(strategy)].assign(
            cfg.fraction_sweep.size(), 0.0);

    for (int rep = 0; rep < cfg.repeats; ++rep) {
        const auto ranked = detail::prepare_ranked_run(cfg, rep);
        for (std::size_t fi = 0; fi < cfg.fraction_sweep.size(); ++fi) {
            const double fraction = cfg.fraction_sweep[fi];
            for (const auto strategy : strategies) {
                const auto removed = detail::removal_set(ranked, cfg, strategy, fraction, rep);
                const auto metrics = removed.empty()
                                         ? detail::FinalMetrics{ranked.baseline_final_loss,
                                                                ranked.baseline_final_acc}
                                         : detail::continue_with_removal(ranked, cfg, removed);
                const std::string label = detail::strategy_name(strategy);
                outcome.mean_loss_by_fraction[label][fi] += metrics.loss_value / cfg.repeats;
                char frac[24];
                std::snprintf(frac, sizeof frac, "%g", fraction);
                outcome.table.add(T, -1,
                                  "final_loss[" + label + "][fraction=" + frac +
                                      "][rep=" + std::to_string(rep) + "]",
                                  metrics.loss_value);
                outcome.table.add(T, -1,
                                  "final_acc[" + label + "][fraction=" + frac +
                                      "][rep=" + std::to_string(rep) + "]",
                                  metrics.acc_value);
            }
        }
    }
    for (const auto& [label, by_fraction] : outcome.mean_loss_by_fraction)
        for (std::size_t fi = 0; fi < by_fraction.size(); ++fi) {
            char frac[24];
            std::snprintf(frac, sizeof frac, "%g", cfg.fraction_sweep[fi]);
            outcome.table.add(T, -1,
                              "final_loss_mean[" + label + "][fraction=" + frac + "]",
                              by_fraction[fi]);
        }
    return outcome;
}

// ---------------------------------------------------------------------------
// diagnostics: per-layer curvature and contraction report plus the full
// estimator state history.
// ---------------------------------------------------------------------------

struct DiagnosticsOutcome {
    ResultTable table;
    DiagnosticsReport report;
    std::vector<TruncationEvent> events;
    std::string state_history; // structured-text snapshot rows
};

inline DiagnosticsOutcome run_diagnostics(const ExperimentConfig& cfg) {
    auto run = detail::prepare_run(cfg);
    DiagnosticsOutcome outcome;
    outcome.table.config_hash = config_hash(cfg);

    FederationConfig est_fed = run.fed;
    est_fed.estimator_mode = detail::resolved_mode(cfg);
    est_fed.hessian_mode = detail::resolved_hessian(cfg);
    if (est_fed.hessian_mode == HessianMode::exact_dense)
        detail::require_dense_capacity(run.spec, est_fed.dense_cap);

    InfluenceState state = make_influence_state(run.spec, est_fed);
    RunOptions opts;
    opts.record = est_fed.hessian_mode == HessianMode::exact_dense
                      ? RecordKind::gradients_and_exact
                      : RecordKind::gradients;
    opts.keep_records = false;
    opts.on_round = [&](const RoundRecord& rec, const LayeredParams& w_prev,
                        const LayeredParams& w_t) {
        state = update_influence(state, rec, w_t, w_prev, est_fed, cfg.workers);
    };
    run_federation_ex(run.spec, run.data, run.fed, opts);

    outcome.report = compute_diagnostics(state, {}, est_fed);
    outcome.events = state.events;
    outcome.state_history = export_state_history(state);

    for (const auto& layer : outcome.report.layers) {
        const std::string suffix = "[layer=" + std::to_string(layer.layer) + "]";
        outcome.table.add(run.fed.rounds, -1, "lambda_hat" + suffix, layer.lambda_hat);
        outcome.table.add(run.fed.rounds, -1, "Lambda_hat" + suffix, layer.Lambda_hat);
        outcome.table.add(run.fed.rounds, -1, "alpha_hat" + suffix, layer.alpha_hat);
        outcome.table.add(run.fed.rounds, -1, "gamma_hat" + suffix, layer.gamma_hat);
        outcome.table.add(run.fed.rounds, -1, "case" + suffix, layer.case_label);
        outcome.table.add(run.fed.rounds, -1, "truncation_round" + suffix,
                          layer.truncation_round);
    }
    for (const auto& event : outcome.events)
        outcome.table.add(event.round, event.participant,
                          "truncation_event[layer=" + std::to_string(event.layer) + "]", 1.0);
    // History rows arrive in contiguous blocks of one row per layer.
    const std::size_t layers = state.layer_truncated.size();
    for (std::size_t base = 0; base + layers <= state.history.size(); base += layers) {
        double eps_total = 0.0, mapped_total = 0.0;
        for (std::size_t j = 0; j < layers; ++j) {
            const auto& h = state.history[base + j];
            eps_total += h.eps_norm * h.eps_norm;
            mapped_total += h.mapped_norm * h.mapped_norm;
        }
        outcome.table.add(state.history[base].round, state.history[base].client, "eps_norm",
                          std::sqrt(eps_total));
        outcome.table.add(state.history[base].round, state.history[base].client,
                          "mapped_norm", std::sqrt(mapped_total));
    }
    return outcome;
}

} // namespace fedfluence
