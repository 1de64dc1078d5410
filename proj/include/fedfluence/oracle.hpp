#pragma once

#include <cmath>
#include <string>

#include "fedfluence/errors.hpp"
#include "fedfluence/fedavg.hpp"

namespace fedfluence {

// Exact ground truth: replay the whole federation with client c filtered
// out of every round's participant set. The selection sequence and the
// surviving clients' gradient-sampling seeds are identical to the full run,
// so any difference stems from the removal alone.
inline FederationTrajectory leave_one_out_retrain(const ModelSpec& spec,
                                                  const FederationData& data,
                                                  const FederationConfig& config, int c,
                                                  int workers = 1,
                                                  RecordKind record = RecordKind::none) {
    if (c < 0 || c >= config.clients)
        throw IndexError("leave_one_out_retrain: client id " + std::to_string(c) +
                         " out of range");
    RunOptions opts;
    opts.record = record;
    opts.keep_records = record != RecordKind::none;
    opts.removed = {c};
    opts.workers = workers;
    return run_federation_ex(spec, data, config, opts);
}

// Exact influence on parameters at round t: the leave-one-out model minus
// the full model.
inline LayeredParams exact_fip(const FederationTrajectory& full,
                               const FederationTrajectory& loo, int t) {
    if (full.first_round != loo.first_round || full.models.size() != loo.models.size())
        throw ComparisonError("exact_fip: trajectories do not share a configuration");
    if (t < full.first_round || t > full.last_round())
        throw IndexError("exact_fip: round " + std::to_string(t) + " not stored");
    if (!full.model_at(t).same_layout(loo.model_at(t)))
        throw ComparisonError("exact_fip: trajectories have different model layouts");
    return sub(loo.model_at(t), full.model_at(t));
}

// Euclidean distance between exact and estimated influence over the
// concatenation of all layer blocks.
inline double estimation_error(const LayeredParams& exact, const LayeredParams& estimated) {
    require_same_layout(exact, estimated, "estimation_error");
    double acc = 0.0;
    for (std::size_t j = 0; j < exact.layers.size(); ++j)
        for (std::size_t i = 0; i < exact.layers[j].size(); ++i) {
            const double d = exact.layers[j][i] - estimated.layers[j][i];
            acc += d * d;
        }
    return std::sqrt(acc);
}

} // namespace fedfluence
