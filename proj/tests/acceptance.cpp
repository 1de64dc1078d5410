// Acceptance suite: one test case per release criterion, each printing a
// single pass/fail line. Run directly for the summary or through ctest.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "fedfluence/experiments.hpp"
#include "fedfluence/linalg.hpp"
#include "fedfluence/presets.hpp"
#include "fedfluence/verify.hpp"

using namespace fedfluence;

namespace {

void report(int criterion, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", criterion, name,
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

ExperimentConfig preset_config(const char* name) {
    const auto* preset = find_preset(name);
    REQUIRE(preset != nullptr);
    return parse_experiment_config(std::string(preset->text));
}

DenseMatrix outer_product_hessian(const std::vector<double>& flat, int n_s, int dim) {
    DenseMatrix h(dim);
    for (int z = 0; z < n_s; ++z) {
        const double* g = flat.data() + static_cast<std::size_t>(z) * dim;
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) h.at(i, j) += g[i] * g[j];
    }
    for (auto& v : h.flat()) v /= static_cast<double>(n_s);
    return h;
}

} // namespace

TEST_CASE("criterion 1: fisher recursion equals the dense product") {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(2024);
    double worst = 0.0;
    for (int instance = 0; instance < 100; ++instance) {
        const int m = 1 + static_cast<int>(rng.below(4));
        const int n_s = 1 + static_cast<int>(rng.below(10));
        const int dim = 1 + static_cast<int>(rng.below(50));
        const double eta = 0.02 + 0.3 * rng.uniform01();
        std::vector<std::vector<double>> storage;
        std::vector<DenseMatrix> hessians;
        for (int i = 0; i < m; ++i) {
            std::vector<double> flat(static_cast<std::size_t>(n_s) * dim);
            for (auto& v : flat) v = rng.normal();
            hessians.push_back(outer_product_hessian(flat, n_s, dim));
            storage.push_back(std::move(flat));
        }
        std::vector<GradBlock> blocks;
        for (auto& s : storage) blocks.push_back({s.data(), n_s, dim});
        std::vector<double> eps(static_cast<std::size_t>(dim));
        for (auto& v : eps) v = rng.normal(0.0, 2.0);

        const auto fisher = sequential_apply_fisher(blocks, eps, eta, n_s);
        const auto dense = dense_reference_apply(hessians, eps, eta);
        const double scale = std::max(1e-12, vec_norm(dense));
        for (int i = 0; i < dim; ++i)
            worst = std::max(worst, std::abs(fisher[static_cast<std::size_t>(i)] -
                                             dense[static_cast<std::size_t>(i)]) / scale);
    }
    const double elapsed = seconds_since(start);
    const bool pass = worst < 1e-10 && elapsed < 5.0;
    report(1, "fisher recursion == dense product on 100 random instances", pass,
           "max rel err = " + std::to_string(worst) + ", " + std::to_string(elapsed) + " s");
    CHECK(worst < 1e-10);
    CHECK(elapsed < 5.0);
}

namespace {

LayeredParams scalar_params(double v) {
    LayeredParams p({LayerShape{1, 1}});
    p.layers[0][0] = v;
    return p;
}

ParticipantRecord scalar_participant(int id, int n_k, double local,
                                     const std::vector<double>& hessians) {
    ParticipantRecord p;
    p.client_id = id;
    p.n_k = n_k;
    p.local_model = scalar_params(local);
    p.exact_hessians.resize(hessians.size());
    for (std::size_t i = 0; i < hessians.size(); ++i) {
        DenseMatrix h(1);
        h.at(0, 0) = hessians[i];
        p.exact_hessians[i].push_back(std::move(h));
    }
    return p;
}

} // namespace

TEST_CASE("criterion 2: influence recursion matches the hand-unrolled form") {
    // Three clients, scalar parameter, two rounds, exact dense Hessians.
    FederationConfig cfg;
    cfg.learning_rate = 0.25;
    cfg.clients = 3;
    cfg.local_iterations = 2;
    cfg.gradient_samples = 1;
    cfg.estimator_mode = EstimatorMode::basic;
    cfg.hessian_mode = HessianMode::exact_dense;

    std::vector<RoundRecord> records(2);
    records[0].round = 1;
    records[0].participants.push_back(scalar_participant(0, 2, 0.9, {0.4, 0.7}));
    records[0].participants.push_back(scalar_participant(1, 3, -0.6, {1.1, 0.2}));
    records[1].round = 2;
    records[1].participants.push_back(scalar_participant(1, 3, 0.3, {0.8, 1.3}));
    records[1].participants.push_back(scalar_participant(2, 5, -0.1, {0.5, 0.9}));

    std::vector<LayeredParams> w{scalar_params(0.05), aggregate_record(records[0]),
                                 aggregate_record(records[1])};

    InfluenceState state;
    state.clients = 3;
    state.eps.assign(3, scalar_params(0.0));
    state.layer_truncated.assign(1, false);
    state.participant_layer_truncated.assign(3, std::vector<bool>(1, false));
    state.stats.assign(1, LayerStats{});
    for (int t = 1; t <= 2; ++t)
        state = update_influence(state, records[static_cast<std::size_t>(t - 1)],
                                 w[static_cast<std::size_t>(t)],
                                 w[static_cast<std::size_t>(t - 1)], cfg);

    double worst = 0.0;
    for (int c = 0; c < 3; ++c) {
        // eps_t = M_t eps_{t-1} + comb_t, unrolled with plain scalars.
        double eps = 0.0;
        for (int t = 1; t <= 2; ++t) {
            const auto& rec = records[static_cast<std::size_t>(t - 1)];
            double total = 0.0;
            for (const auto& p : rec.participants)
                if (p.client_id != c) total += p.n_k;
            double mapped = 0.0;
            for (const auto& p : rec.participants) {
                if (p.client_id == c) continue;
                double factor = 1.0;
                for (const auto& hs : p.exact_hessians)
                    factor *= 1.0 - cfg.learning_rate * hs[0].at(0, 0);
                mapped += p.n_k / total * factor * eps;
            }
            double comb = 0.0;
            if (rec.find(c) != nullptr) {
                double reagg = 0.0;
                for (const auto& p : rec.participants)
                    if (p.client_id != c) reagg += p.n_k / total * p.local_model.layers[0][0];
                comb = reagg - w[static_cast<std::size_t>(t)].layers[0][0];
            }
            eps = mapped + comb;
        }
        worst = std::max(worst,
                         std::abs(state.eps[static_cast<std::size_t>(c)].layers[0][0] - eps));
    }
    const bool pass = worst < 1e-12;
    report(2, "scalar two-round recursion reproduced", pass,
           "max |difference| = " + std::to_string(worst));
    CHECK(worst < 1e-12);
}

TEST_CASE("criterion 3: oracle soundness for never-selected clients") {
    const auto spec = logistic_regression_spec(4, 2);
    const auto data = synth_generate(16, 4, 2, 777, DataSkew::noniid_unbalanced);
    FederationConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.clients = 16;
    cfg.participants_per_round = 3;
    cfg.local_iterations = 2;
    cfg.rounds = 6;
    cfg.gradient_samples = 4;
    cfg.selection_seed = 314;
    cfg.init_seed = 159;
    cfg.validate(data);

    std::set<int> seen;
    for (int t = 1; t <= cfg.rounds; ++t)
        for (int id : select_participants(cfg, t)) seen.insert(id);
    int never = -1;
    for (int id = 0; id < cfg.clients; ++id)
        if (!seen.count(id)) { never = id; break; }
    REQUIRE(never >= 0);

    const auto full = run_federation(spec, data, cfg);
    const auto loo = leave_one_out_retrain(spec, data, cfg, never);

    double max_traj_diff = 0.0;
    for (int t = 0; t <= cfg.rounds; ++t)
        max_traj_diff = std::max(max_traj_diff,
                                 max_abs_diff(full.model_at(t), loo.model_at(t)));

    auto state = make_influence_state(spec, cfg);
    double max_exact = 0.0, max_est = 0.0, max_delta = 0.0;
    for (int t = 1; t <= cfg.rounds; ++t) {
        state = update_influence(state, full.records[static_cast<std::size_t>(t - 1)],
                                 full.model_at(t), full.model_at(t - 1), cfg);
        const auto exact = exact_fip(full, loo, t);
        max_exact = std::max(max_exact, l2_norm(exact));
        max_est = std::max(max_est, l2_norm(state.eps[static_cast<std::size_t>(never)]));
        max_delta = std::max(
            max_delta, estimation_error(exact, state.eps[static_cast<std::size_t>(never)]));
    }
    const bool pass = max_traj_diff <= 1e-12 && max_exact == 0.0 && max_est == 0.0 &&
                      max_delta == 0.0;
    report(3, "never-selected client: exact fip, estimate and error all zero", pass,
           "traj diff = " + std::to_string(max_traj_diff));
    CHECK(max_traj_diff <= 1e-12);
    CHECK(max_exact == 0.0);
    CHECK(max_est == 0.0);
    CHECK(max_delta == 0.0);
}

TEST_CASE("criterion 4: gradient and hessian numerics") {
    Rng rng(404);
    double worst_grad = 0.0;
    for (int draw = 0; draw < 50; ++draw) {
        const bool use_mlp = draw % 2 == 1;
        const auto spec = use_mlp ? mlp_spec(3, 3, {5}) : logistic_regression_spec(4, 3);
        LayeredParams w(spec.layout());
        for (auto& layer : w.layers)
            for (auto& v : layer) v = rng.normal(0.0, 0.6);
        Dataset ds;
        for (int i = 0; i < 8; ++i) {
            LabeledSample z;
            z.features.resize(static_cast<std::size_t>(spec.input_dim));
            for (auto& v : z.features) v = rng.normal();
            z.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.classes)));
            ds.push_back(std::move(z));
        }
        const auto g = grad(spec, w, ds);
        const double h = 1e-5;
        for (std::size_t j = 0; j < w.layers.size(); ++j)
            for (std::size_t i = 0; i < w.layers[j].size(); ++i) {
                const double saved = w.layers[j][i];
                w.layers[j][i] = saved + h;
                const double lp = loss(spec, w, ds);
                w.layers[j][i] = saved - h;
                const double lm = loss(spec, w, ds);
                w.layers[j][i] = saved;
                const double fd = (lp - lm) / (2.0 * h);
                const double denom =
                    std::max({1e-2, std::abs(fd), std::abs(g.layers[j][i])});
                worst_grad = std::max(worst_grad, std::abs(fd - g.layers[j][i]) / denom);
            }
    }

    double worst_asym = 0.0, worst_eig = 0.0;
    const auto spec = logistic_regression_spec(4, 3);
    for (int rep = 0; rep < 5; ++rep) {
        LayeredParams w(spec.layout());
        for (auto& layer : w.layers)
            for (auto& v : layer) v = rng.normal(0.0, 0.7);
        Dataset ds;
        for (int i = 0; i < 10; ++i) {
            LabeledSample z;
            z.features = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
            z.label = static_cast<int>(rng.below(3));
            ds.push_back(std::move(z));
        }
        for (int layer = 0; layer < 2; ++layer) {
            const auto h = exact_layer_hessian(spec, w, ds, layer);
            worst_asym = std::max(worst_asym, h.max_asymmetry());
            const auto eig = symmetric_eigenvalues(h);
            worst_eig = std::min(worst_eig, eig.front());
        }
    }
    const bool pass = worst_grad < 1e-4 && worst_asym < 1e-9 && worst_eig >= -1e-8;
    report(4, "gradients match finite differences; hessians symmetric and psd", pass,
           "grad rel = " + std::to_string(worst_grad) +
               ", asym = " + std::to_string(worst_asym) +
               ", min eig = " + std::to_string(worst_eig));
    CHECK(worst_grad < 1e-4);
    CHECK(worst_asym < 1e-9);
    CHECK(worst_eig >= -1e-8);
}

TEST_CASE("criterion 5: convex-setting correlation over three data seeds") {
    const auto start = std::chrono::steady_clock::now();
    const auto check = check_convex_correlation(preset_config("convex-small"));
    const double elapsed = seconds_since(start);
    const bool pass = check.pass && elapsed < 600.0;
    report(5, "final-round pearson >= 0.8 on convex-small", pass,
           check.detail + ", " + std::to_string(elapsed) + " s");
    CHECK(check.pass);
    CHECK(elapsed < 600.0);
}

TEST_CASE("criterion 6: layer truncation is necessary and effective") {
    const auto blowup = check_blowup(preset_config("blowup-demo"));
    report(6, "basic estimator blows up", blowup.basic_blowup.pass,
           blowup.basic_blowup.detail);
    report(6, "lwet stays near the combinatorial scale", blowup.lwet_bounded.pass,
           blowup.lwet_bounded.detail);
    report(6, "truncation events logged", blowup.truncation_logged.pass,
           blowup.truncation_logged.detail);
    report(6, "lwet error below basic error after truncation", blowup.delta_ordering.pass,
           blowup.delta_ordering.detail);
    CHECK(blowup.basic_blowup.pass);
    CHECK(blowup.lwet_bounded.pass);
    CHECK(blowup.truncation_logged.pass);
    CHECK(blowup.delta_ordering.pass);
}

TEST_CASE("criterion 7: error growth is at most linear in the convex setting") {
    const auto check = check_error_growth(preset_config("convex-small"));
    report(7, "exact-hessian error growth sub-exponential", check.pass, check.detail);
    CHECK(check.pass);
}

TEST_CASE("criterion 8: cleansing ordering on mean final loss") {
    const auto check = check_cleansing_order(preset_config("convex-small"));
    report(8, "remove-lowest <= random <= remove-highest", check.pass, check.detail);
    CHECK(check.pass);
}

TEST_CASE("criterion 9: estimator cost scales linearly in model width") {
    auto run_width = [](int width, double& best_seconds) {
        const auto spec = logistic_regression_spec(width, 5);
        SynthOptions opt;
        opt.samples_per_client = 40;
        const auto data = synth_generate(20, width, 5, 31337, DataSkew::iid_balanced, opt);
        FederationConfig cfg;
        cfg.learning_rate = 0.01;
        cfg.clients = 20;
        cfg.participants_per_round = 5;
        cfg.local_iterations = 3;
        cfg.rounds = 8;
        cfg.gradient_samples = 20;
        cfg.selection_seed = 41;
        cfg.init_seed = 42;
        cfg.estimator_mode = EstimatorMode::lwet;
        cfg.hessian_mode = HessianMode::fisher;
        const auto trajectory = run_federation(spec, data, cfg);

        best_seconds = 1e300;
        for (int rep = 0; rep < 5; ++rep) {
            auto state = make_influence_state(spec, cfg);
            const auto t0 = std::chrono::steady_clock::now();
            for (int t = 1; t <= cfg.rounds; ++t)
                state = update_influence(state, trajectory.records[static_cast<std::size_t>(t - 1)],
                                         trajectory.model_at(t), trajectory.model_at(t - 1),
                                         cfg);
            best_seconds = std::min(best_seconds, seconds_since(t0));
        }
    };

    const auto constructions_before = DenseMatrix::constructions();
    double narrow = 0.0, wide = 0.0;
    run_width(250, narrow);
    const auto constructions_mid = DenseMatrix::constructions();
    run_width(500, wide);
    const auto constructions_after = DenseMatrix::constructions();
    const double ratio = wide / narrow;

    // The Fisher path must never build a dense matrix.
    const bool no_dense = constructions_mid == constructions_before &&
                          constructions_after == constructions_mid;
    const bool pass = ratio <= 2.6 && no_dense;
    report(9, "doubling width raises estimator time <= 2.6x, no dense matrices", pass,
           "ratio = " + std::to_string(ratio) + " (" + std::to_string(narrow) + " s -> " +
               std::to_string(wide) + " s), dense constructions = " +
               std::to_string(constructions_after - constructions_before));
    CHECK(ratio <= 2.6);
    CHECK(no_dense);
}

TEST_CASE("criterion 10: preset runs are byte-deterministic") {
    bool all = true;
    std::string detail;
    for (const auto& preset : builtin_presets()) {
        auto cfg = parse_experiment_config(std::string(preset.text));
        const auto check = check_determinism(cfg);
        all = all && check.pass;
        if (!detail.empty()) detail += ", ";
        detail += std::string(preset.name) + ": " + (check.pass ? "ok" : "DIFFERS");
    }
    report(10, "every preset produces byte-identical result tables twice", all, detail);
    CHECK(all);
}
