#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fedfluence/data.hpp"
#include "fedfluence/errors.hpp"
#include "fedfluence/layered.hpp"
#include "fedfluence/linalg.hpp"
#include "fedfluence/model.hpp"
#include "fedfluence/parallel.hpp"
#include "fedfluence/rng.hpp"

namespace fedfluence {

enum class EstimatorMode { basic, lwet, lwet_fine };
enum class HessianMode { exact_dense, fisher };

struct FederationConfig {
    double learning_rate = 0.01;   // eta
    int clients = 0;               // K
    int participants_per_round = 0;
    int local_iterations = 1;      // m
    int rounds = 1;                // T
    int gradient_samples = 1;      // N_s
    std::uint64_t selection_seed = 0;
    std::uint64_t init_seed = 0;
    EstimatorMode estimator_mode = EstimatorMode::lwet;
    HessianMode hessian_mode = HessianMode::fisher;
    double overflow_guard = 1e30;
    int dense_cap = 5000;

    void validate(const FederationData& data) const {
        if (!(learning_rate > 0.0)) throw ConfigError("config: learning rate must be > 0");
        if (clients < 2) throw ConfigError("config: need at least 2 clients");
        if (participants_per_round < 2 || participants_per_round > clients)
            throw ConfigError("config: participants per round must be in [2, clients]");
        if (local_iterations < 1) throw ConfigError("config: local iterations must be >= 1");
        if (rounds < 1) throw ConfigError("config: rounds must be >= 1");
        if (data.num_clients() != clients)
            throw ConfigError("config: clients=" + std::to_string(clients) +
                              " but data has " + std::to_string(data.num_clients()));
        for (const auto& c : data.clients)
            if (c.size() < 1) throw ConfigError("config: empty client dataset");
        if (gradient_samples < 1 || gradient_samples > data.min_client_size())
            throw ConfigError("config: gradient samples must be in [1, min client size=" +
                              std::to_string(data.min_client_size()) + "]");
        if (!(overflow_guard > 0.0)) throw ConfigError("config: overflow guard must be > 0");
    }
};

enum class RecordKind { none, gradients, gradients_and_exact };

// Everything retained from one participant in one round: the final local
// model plus, per local iteration, the sampled per-example layer gradients
// (flattened sample-major) and optionally exact dense layer Hessians, both
// taken at the iterate visited before each local step.
struct ParticipantRecord {
    int client_id = 0;
    int n_k = 0;
    LayeredParams local_model;
    std::vector<std::vector<std::vector<double>>> sampled_grads; // [m][block] -> N_s * p_j
    std::vector<std::vector<DenseMatrix>> exact_hessians;        // [m][block], empty if unrecorded
};

struct RoundRecord {
    int round = 0;
    std::vector<ParticipantRecord> participants; // ascending client_id

    const ParticipantRecord* find(int client_id) const {
        for (const auto& p : participants)
            if (p.client_id == client_id) return &p;
        return nullptr;
    }
};

struct FederationTrajectory {
    int first_round = 0;                 // round index of models[0]
    std::vector<LayeredParams> models;   // w_{first_round} .. w_T
    std::vector<RoundRecord> records;    // rounds first_round+1 .. T, when kept
    std::vector<int> degenerate_rounds;  // rounds whose participant set was empty

    int last_round() const {
        return first_round + static_cast<int>(models.size()) - 1;
    }

    const LayeredParams& model_at(int t) const {
        if (t < first_round || t > last_round())
            throw IndexError("trajectory: round " + std::to_string(t) + " not stored");
        return models[static_cast<std::size_t>(t - first_round)];
    }
};

// Uniform draw of the round-t participant set; a pure function of
// (selection seed, t) so any replay can reproduce it.
inline std::vector<int> select_participants(const FederationConfig& config, int t) {
    if (t < 1) throw IndexError("select_participants: round index must be >= 1");
    Rng rng(derive_seed(config.selection_seed, SeedStream::participant_selection,
                        {static_cast<std::uint64_t>(t)}));
    return rng.sample_without_replacement(config.clients, config.participants_per_round);
}

// m full-batch gradient steps from w_start on the client's local data,
// recording the per-iteration gradient samples (and exact Hessians when
// asked) at each pre-step iterate.
inline ParticipantRecord local_train(const ModelSpec& spec, const LayeredParams& w_start,
                                     const ClientDataset& client,
                                     const FederationConfig& config, int t,
                                     RecordKind record = RecordKind::gradients) {
    if (client.samples.empty())
        throw EmptyInputError("local_train: client dataset is empty");
    for (const auto& z : client.samples)
        if (z.label < 0 || z.label >= spec.classes)
            throw ShapeError("local_train: label out of range for client " +
                             std::to_string(client.client_id));
    const int m = config.local_iterations;
    const int n_s = config.gradient_samples;
    const int blocks = static_cast<int>(w_start.layers.size());

    ParticipantRecord rec;
    rec.client_id = client.client_id;
    rec.n_k = client.size();
    LayeredParams w = w_start;

    if (record != RecordKind::none) rec.sampled_grads.resize(static_cast<std::size_t>(m));
    if (record == RecordKind::gradients_and_exact)
        rec.exact_hessians.resize(static_cast<std::size_t>(m));

    for (int i = 0; i < m; ++i) {
        if (record != RecordKind::none) {
            Rng rng(derive_seed(config.selection_seed, SeedStream::gradient_sampling,
                                {static_cast<std::uint64_t>(t),
                                 static_cast<std::uint64_t>(client.client_id),
                                 static_cast<std::uint64_t>(i)}));
            const auto picked = rng.sample_without_replacement(rec.n_k, n_s);
            auto& per_block = rec.sampled_grads[static_cast<std::size_t>(i)];
            per_block.resize(static_cast<std::size_t>(blocks));
            for (int j = 0; j < blocks; ++j)
                per_block[static_cast<std::size_t>(j)].reserve(
                    static_cast<std::size_t>(n_s) * w.layers[static_cast<std::size_t>(j)].size());
            for (int idx : picked) {
                const auto g = per_example_grad_all(spec, w,
                                                    client.samples[static_cast<std::size_t>(idx)]);
                for (int j = 0; j < blocks; ++j) {
                    const auto& src = g.layers[static_cast<std::size_t>(j)];
                    auto& dst = per_block[static_cast<std::size_t>(j)];
                    dst.insert(dst.end(), src.begin(), src.end());
                }
            }
        }
        if (record == RecordKind::gradients_and_exact) {
            auto& per_block = rec.exact_hessians[static_cast<std::size_t>(i)];
            per_block.reserve(static_cast<std::size_t>(blocks));
            for (int j = 0; j < blocks; ++j)
                per_block.push_back(
                    exact_layer_hessian(spec, w, client.samples, j, config.dense_cap));
        }
        auto diverged = [&]() {
            return DivergenceError("local training diverged at round " + std::to_string(t) +
                                   ", client " + std::to_string(client.client_id) +
                                   ", iteration " + std::to_string(i + 1));
        };
        bool grad_finite = true;
        try {
            const LayeredParams g = grad(spec, w, client.samples);
            add_scaled_in_place(w, -config.learning_rate, g);
        } catch (const Error&) {
            grad_finite = false; // non-finite gradient is the same divergence event
        }
        if (!grad_finite || !all_finite(w)) throw diverged();
    }
    rec.local_model = std::move(w);
    return rec;
}

// Dataset-size-weighted average of local models.
inline LayeredParams aggregate(const std::map<int, LayeredParams>& locals,
                               const std::map<int, int>& sizes) {
    if (locals.empty()) throw EmptyInputError("aggregate: no local models");
    if (locals.size() != sizes.size())
        throw ShapeError("aggregate: locals and sizes have different key sets");
    double total = 0.0;
    for (const auto& [id, n] : sizes) {
        if (locals.find(id) == locals.end())
            throw ShapeError("aggregate: size entry without local model");
        if (n < 1) throw ConfigError("aggregate: nonpositive dataset size");
        total += n;
    }
    LayeredParams out = zeros_like(locals.begin()->second);
    for (const auto& [id, w] : locals)
        add_scaled_in_place(out, sizes.at(id) / total, w);
    if (!all_finite(out)) throw DivergenceError("aggregate: non-finite result");
    return out;
}

// Weighted average over the participant set minus one client, with weights
// renormalized. Removing an absent client is a no-op by construction.
inline LayeredParams aggregate_without(const std::map<int, LayeredParams>& locals,
                                       const std::map<int, int>& sizes, int removed) {
    if (locals.find(removed) == locals.end()) return aggregate(locals, sizes);
    if (locals.size() == 1)
        throw DegenerateRoundError("aggregate_without: removing the sole participant");
    std::map<int, LayeredParams> l = locals;
    std::map<int, int> s = sizes;
    l.erase(removed);
    s.erase(removed);
    return aggregate(l, s);
}

inline LayeredParams aggregate_record(const RoundRecord& record) {
    std::map<int, LayeredParams> locals;
    std::map<int, int> sizes;
    for (const auto& p : record.participants) {
        locals.emplace(p.client_id, p.local_model);
        sizes.emplace(p.client_id, p.n_k);
    }
    return aggregate(locals, sizes);
}

inline LayeredParams aggregate_record_without(const RoundRecord& record, int removed) {
    std::map<int, LayeredParams> locals;
    std::map<int, int> sizes;
    for (const auto& p : record.participants) {
        locals.emplace(p.client_id, p.local_model);
        sizes.emplace(p.client_id, p.n_k);
    }
    return aggregate_without(locals, sizes, removed);
}

struct RunOptions {
    RecordKind record = RecordKind::gradients;
    bool keep_records = true;
    std::set<int> removed;                 // clients filtered from every round
    int start_round = 0;                   // resume point; w_start is the model there
    int end_round = -1;                    // stop after this round; -1 = config.rounds
    const LayeredParams* w_start = nullptr;
    int workers = 1;
    // Called after each round with (record, w_{t-1}, w_t); lets callers
    // consume records streaming instead of keeping them all.
    std::function<void(const RoundRecord&, const LayeredParams&, const LayeredParams&)> on_round;
};

inline FederationTrajectory run_federation_ex(const ModelSpec& spec,
                                              const FederationData& data,
                                              const FederationConfig& config,
                                              const RunOptions& opts) {
    spec.validate();
    FederationTrajectory trajectory;
    trajectory.first_round = opts.start_round;
    LayeredParams w = opts.w_start ? *opts.w_start : init_params(spec, config.init_seed);
    trajectory.models.push_back(w);

    const int last = opts.end_round < 0 ? config.rounds : opts.end_round;
    for (int t = opts.start_round + 1; t <= last; ++t) {
        auto selected = select_participants(config, t);
        std::vector<int> active;
        for (int id : selected)
            if (!opts.removed.count(id)) active.push_back(id);

        RoundRecord record;
        record.round = t;

        if (active.empty()) {
            // No surviving participant: the global model carries over.
            trajectory.degenerate_rounds.push_back(t);
            trajectory.models.push_back(w);
            if (opts.on_round) opts.on_round(record, w, w);
            if (opts.keep_records) trajectory.records.push_back(std::move(record));
            continue;
        }

        record.participants.resize(active.size());
        const LayeredParams w_prev = w;
        parallel_for(static_cast<int>(active.size()), opts.workers, [&](int i) {
            const auto& client = data.client(active[static_cast<std::size_t>(i)]);
            record.participants[static_cast<std::size_t>(i)] =
                local_train(spec, w_prev, client, config, t, opts.record);
        });

        w = aggregate_record(record);
        trajectory.models.push_back(w);
        if (opts.on_round) opts.on_round(record, w_prev, w);
        if (opts.keep_records) trajectory.records.push_back(std::move(record));
    }
    return trajectory;
}

// Full FedAvg run: w_0 from the init seed, rounds 1..T.
inline FederationTrajectory run_federation(const ModelSpec& spec, const FederationData& data,
                                           const FederationConfig& config,
                                           RecordKind record = RecordKind::gradients) {
    RunOptions opts;
    opts.record = record;
    return run_federation_ex(spec, data, config, opts);
}

} // namespace fedfluence
