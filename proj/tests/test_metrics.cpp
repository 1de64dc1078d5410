#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <vector>

#include "fedfluence/metrics.hpp"
#include "fedfluence/oracle.hpp"

using namespace fedfluence;

TEST_CASE("zero influence leaves loss and accuracy unchanged") {
    const auto spec = logistic_regression_spec(2, 2);
    const auto w = init_params(spec, 3);
    const auto eps = zeros_like(w);
    Dataset test{{{0.5, -0.5}, 0}, {{-0.5, 0.5}, 1}};
    CHECK(fil(spec, w, eps, test) == 0.0);
    CHECK(fia(spec, w, eps, test) == 0.0);
}

TEST_CASE("fil equals the two separate loss calls by definition") {
    Rng rng(1);
    const auto spec = logistic_regression_spec(3, 2);
    auto w = init_params(spec, 4);
    LayeredParams eps(spec.layout());
    for (auto& layer : eps.layers)
        for (auto& v : layer) v = rng.normal(0.0, 0.1);
    Dataset test;
    for (int i = 0; i < 9; ++i) {
        LabeledSample z;
        z.features = {rng.normal(), rng.normal(), rng.normal()};
        z.label = static_cast<int>(rng.below(2));
        test.push_back(std::move(z));
    }
    const double direct = loss(spec, add(w, eps), test) - loss(spec, w, test);
    CHECK(fil(spec, w, eps, test) == direct);
}

TEST_CASE("exact fil equals the loss difference between loo and full models") {
    const auto spec = logistic_regression_spec(3, 2);
    const auto data = synth_generate(6, 3, 2, 61, DataSkew::noniid_unbalanced);
    FederationConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.clients = 6;
    cfg.participants_per_round = 3;
    cfg.local_iterations = 2;
    cfg.rounds = 4;
    cfg.gradient_samples = 3;
    cfg.selection_seed = 15;
    cfg.init_seed = 16;
    const auto full = run_federation(spec, data, cfg, RecordKind::none);
    const auto loo = leave_one_out_retrain(spec, data, cfg, 2);
    const int t = cfg.rounds;
    const auto eps_exact = exact_fip(full, loo, t);
    const double fil_from_eps = fil(spec, full.models[static_cast<std::size_t>(t)],
                                    eps_exact, data.test_set);
    const double fil_direct = loss(spec, loo.models[static_cast<std::size_t>(t)], data.test_set) -
                              loss(spec, full.models[static_cast<std::size_t>(t)], data.test_set);
    CHECK(std::abs(fil_from_eps - fil_direct) <= 1e-12);
}

TEST_CASE("an influence vector that flips every prediction scores -1") {
    const auto spec = logistic_regression_spec(1, 2);
    LayeredParams w(spec.layout());
    w.layers[0] = {5.0, -5.0};
    Dataset test{{{1.0}, 0}, {{-2.0}, 1}, {{0.5}, 0}};
    CHECK(accuracy(spec, w, test) == 1.0);
    const auto eps = scaled(w, -2.0); // w + eps = -w flips every logit
    CHECK(fia(spec, w, eps, test) == -1.0);
}

TEST_CASE("fia stays within [-1, 1] on random inputs") {
    Rng rng(2);
    const auto spec = logistic_regression_spec(3, 3);
    Dataset test;
    for (int i = 0; i < 15; ++i) {
        LabeledSample z;
        z.features = {rng.normal(), rng.normal(), rng.normal()};
        z.label = static_cast<int>(rng.below(3));
        test.push_back(std::move(z));
    }
    for (int rep = 0; rep < 20; ++rep) {
        auto w = init_params(spec, rep);
        LayeredParams eps(spec.layout());
        for (auto& layer : eps.layers)
            for (auto& v : layer) v = rng.normal(0.0, 2.0);
        const double v = fia(spec, w, eps, test);
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("empty test set raises") {
    const auto spec = logistic_regression_spec(2, 2);
    const auto w = init_params(spec, 1);
    const auto eps = zeros_like(w);
    Dataset empty;
    CHECK_THROWS_AS(fil(spec, w, eps, empty), EmptyInputError);
    CHECK_THROWS_AS(fia(spec, w, eps, empty), EmptyInputError);
}

TEST_CASE("pearson on exact linear relations") {
    const std::vector<double> xs{1.0, 2.0, 3.0, 4.0};
    std::vector<double> ys;
    for (double x : xs) ys.push_back(2.0 * x + 1.0);
    CHECK(pearson(xs, ys) == doctest::Approx(1.0).epsilon(1e-12));
    for (auto& y : ys) y = -y;
    CHECK(pearson(xs, ys) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("pearson hand-computed value") {
    const std::vector<double> xs{1.0, 2.0, 3.0};
    const std::vector<double> ys{1.0, 3.0, 2.0};
    CHECK(pearson(xs, ys) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pearson is invariant under positive affine maps of one side") {
    Rng rng(3);
    std::vector<double> xs, ys;
    for (int i = 0; i < 25; ++i) {
        xs.push_back(rng.normal());
        ys.push_back(rng.normal());
    }
    const double base = pearson(xs, ys);
    std::vector<double> xs2;
    for (double x : xs) xs2.push_back(3.7 * x - 11.0);
    CHECK(std::abs(pearson(xs2, ys) - base) < 1e-12);
}

TEST_CASE("pearson input validation") {
    const std::vector<double> xs{1.0, 2.0};
    const std::vector<double> short_ys{1.0};
    CHECK_THROWS_AS(pearson(xs, short_ys), ShapeError);
    const std::vector<double> one{1.0};
    CHECK_THROWS_AS(pearson(one, one), EmptyInputError);
    const std::vector<double> flat{2.0, 2.0, 2.0};
    const std::vector<double> ys{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(pearson(flat, ys), CorrelationError);
    CHECK_THROWS_AS(pearson(ys, flat), CorrelationError);
}

TEST_CASE("ranking by influence-on-loss: high loss impact is valuable") {
    const std::map<int, double> values{{0, 0.5}, {1, -0.1}, {2, 0.2}};
    const auto order = rank_clients(values, RankDirection::valuable_first, ValueMetric::fil);
    CHECK(order == std::vector<int>{0, 2, 1});
    const auto reverse = rank_clients(values, RankDirection::harmful_first, ValueMetric::fil);
    CHECK(reverse == std::vector<int>{1, 2, 0});
}

TEST_CASE("ranking by influence-on-accuracy: low accuracy impact is valuable") {
    const std::map<int, double> values{{0, 0.5}, {1, -0.1}};
    const auto order = rank_clients(values, RankDirection::valuable_first, ValueMetric::fia);
    CHECK(order == std::vector<int>{1, 0});
}

TEST_CASE("equal values rank by client id") {
    const std::map<int, double> values{{5, 1.0}, {2, 1.0}, {9, 1.0}};
    const auto order = rank_clients(values, RankDirection::valuable_first, ValueMetric::fil);
    CHECK(order == std::vector<int>{2, 5, 9});
    const auto rev = rank_clients(values, RankDirection::harmful_first, ValueMetric::fil);
    CHECK(rev == std::vector<int>{2, 5, 9});
}

TEST_CASE("rank_clients is insertion-order independent") {
    std::map<int, double> a;
    a.emplace(3, 0.1);
    a.emplace(1, 0.9);
    a.emplace(2, -0.4);
    std::map<int, double> b;
    b.emplace(2, -0.4);
    b.emplace(1, 0.9);
    b.emplace(3, 0.1);
    CHECK(rank_clients(a, RankDirection::valuable_first, ValueMetric::fil) ==
          rank_clients(b, RankDirection::valuable_first, ValueMetric::fil));
    CHECK_THROWS_AS(rank_clients({}, RankDirection::valuable_first, ValueMetric::fil),
                    EmptyInputError);
}

TEST_CASE("a class-critical client has positive exact fil") {
    // Client 0 holds every sample of class 0; removing it must increase the
    // test loss, i.e. its exact influence on loss is positive.
    const int d = 2;
    const auto spec = logistic_regression_spec(d, 2);
    FederationData data;
    Rng rng(5);
    for (int k = 0; k < 3; ++k) {
        ClientDataset c;
        c.client_id = k;
        for (int i = 0; i < 12; ++i) {
            LabeledSample z;
            z.label = k == 0 ? 0 : 1;
            const double mu = z.label == 0 ? 2.0 : -2.0;
            z.features = {mu + rng.normal(), -mu + rng.normal()};
            c.samples.push_back(std::move(z));
        }
        data.clients.push_back(std::move(c));
    }
    for (int i = 0; i < 30; ++i) {
        LabeledSample z;
        z.label = static_cast<int>(rng.below(2));
        const double mu = z.label == 0 ? 2.0 : -2.0;
        z.features = {mu + rng.normal(), -mu + rng.normal()};
        data.test_set.push_back(std::move(z));
    }
    FederationConfig cfg;
    cfg.learning_rate = 0.2;
    cfg.clients = 3;
    cfg.participants_per_round = 3;
    cfg.local_iterations = 2;
    cfg.rounds = 30;
    cfg.gradient_samples = 4;
    cfg.selection_seed = 17;
    cfg.init_seed = 18;
    const auto full = run_federation(spec, data, cfg, RecordKind::none);
    const auto loo = leave_one_out_retrain(spec, data, cfg, 0);
    const auto eps = exact_fip(full, loo, cfg.rounds);
    CHECK(fil(spec, full.models.back(), eps, data.test_set) > 0.0);
}
