#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fedfluence/errors.hpp"
#include "fedfluence/fedavg.hpp"
#include "fedfluence/layered.hpp"
#include "fedfluence/linalg.hpp"
#include "fedfluence/model.hpp"
#include "fedfluence/parallel.hpp"

namespace fedfluence {

// Comparison slack for the norm-expansion examination; guards against
// fixed-precision ties in an otherwise strict comparison.
inline constexpr double kExamineTolerance = 1e-9;

// View over one local iteration's sampled per-example gradients for one
// layer block (sample-major, n_samples x dim).
struct GradBlock {
    const double* data = nullptr;
    int n_samples = 0;
    int dim = 0;

    std::span<const double> sample(int s) const {
        return {data + static_cast<std::size_t>(s) * dim, static_cast<std::size_t>(dim)};
    }
};

inline GradBlock grad_block_view(const ParticipantRecord& p, int iteration, int layer,
                                 int n_s) {
    const auto& flat = p.sampled_grads[static_cast<std::size_t>(iteration)]
                                      [static_cast<std::size_t>(layer)];
    GradBlock b;
    b.n_samples = n_s;
    b.dim = static_cast<int>(flat.size()) / n_s;
    b.data = flat.data();
    return b;
}

// Applies the product of per-iteration linearized-update factors to a vector
// using only rank-N_s updates: for each iteration, in order,
//   sigma <- sigma - (eta/N_s) * sum_z g_z (g_z . sigma).
// Equivalent to multiplying by the matrix product of the outer-product
// factors, without ever materializing a matrix.
inline std::vector<double> sequential_apply_fisher(std::span<const GradBlock> iterations,
                                                   std::span<const double> eps_in,
                                                   double eta, int n_s) {
    std::vector<double> sigma(eps_in.begin(), eps_in.end());
    const int dim = static_cast<int>(sigma.size());
    std::vector<double> coeffs(static_cast<std::size_t>(n_s));
    for (const auto& block : iterations) {
        if (block.dim != dim || block.n_samples != n_s)
            throw ShapeError("sequential_apply_fisher: gradient block shape mismatch");
        // All dot products use the incoming sigma of this iteration.
        for (int z = 0; z < n_s; ++z)
            coeffs[static_cast<std::size_t>(z)] = vec_dot(block.sample(z), sigma);
        const double scale = eta / static_cast<double>(n_s);
        for (int z = 0; z < n_s; ++z) {
            const double c = scale * coeffs[static_cast<std::size_t>(z)];
            if (c == 0.0) continue;
            const auto g = block.sample(z);
            for (int i = 0; i < dim; ++i)
                sigma[static_cast<std::size_t>(i)] -= c * g[static_cast<std::size_t>(i)];
        }
    }
    return sigma;
}

// Reference path: the same map computed through explicit dense factors,
// (I - eta H_{m-1}) ... (I - eta H_0) eps_in.
inline std::vector<double> dense_reference_apply(std::span<const DenseMatrix> hessians,
                                                 std::span<const double> eps_in, double eta) {
    std::vector<double> v(eps_in.begin(), eps_in.end());
    for (const auto& h : hessians) {
        if (h.size() != static_cast<int>(v.size()))
            throw ShapeError("dense_reference_apply: matrix size mismatch");
        const auto hv = h.apply(v);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= eta * hv[i];
    }
    return v;
}

struct HistoryRow {
    int round = 0;
    int client = 0;
    int layer = 0;
    double eps_norm = 0.0;
    double mapped_norm = 0.0; // 0 when the sequential term was skipped
    bool truncated = false;   // sequential term dropped for this (client, layer)
};

struct TruncationEvent {
    int round = 0;
    int layer = 0;
    int participant = -1; // -1 for a layer-wide flag, else the flagged client
};

struct LayerStats {
    double min_rho = std::numeric_limits<double>::infinity();
    double max_rho = -std::numeric_limits<double>::infinity();
    double max_mapped_ratio = 0.0;
    int truncation_round = -1;

    bool has_probes() const { return max_rho >= min_rho; }
};

// Per-client, per-layer influence vectors with sticky truncation flags.
// eps[c] estimates how the global model would differ had client c been
// removed from every round so far.
struct InfluenceState {
    int round = 0;
    int clients = 0;
    std::vector<LayeredParams> eps;
    std::vector<bool> layer_truncated;                           // lwet
    std::vector<std::vector<bool>> participant_layer_truncated;  // lwet_fine: [client][layer]
    std::vector<HistoryRow> history;
    std::vector<TruncationEvent> events;
    std::vector<LayerStats> stats;
    double max_comb_norm = 0.0;

    int layer_count() const { return static_cast<int>(layer_truncated.size()); }

    bool layer_is_truncated(int layer) const {
        return layer_truncated[static_cast<std::size_t>(layer)];
    }
};

inline InfluenceState make_influence_state(const ModelSpec& spec,
                                           const FederationConfig& config) {
    InfluenceState state;
    state.clients = config.clients;
    const Layout layout = spec.layout();
    state.eps.assign(static_cast<std::size_t>(config.clients), LayeredParams(layout));
    state.layer_truncated.assign(layout.size(), false);
    state.participant_layer_truncated.assign(
        static_cast<std::size_t>(config.clients),
        std::vector<bool>(layout.size(), false));
    state.stats.assign(layout.size(), LayerStats{});
    return state;
}

// Within-round effect of reaggregating round t without client c. Exact zero
// when c did not participate; a round left without participants contributes
// the carry-over difference w_{t-1} - w_t.
inline LayeredParams combinatorial_influence(const RoundRecord& record, int c,
                                             const LayeredParams& w_t,
                                             const LayeredParams& w_prev) {
    if (record.participants.empty()) return sub(w_prev, w_t);
    if (record.find(c) == nullptr) return zeros_like(w_t);
    if (record.participants.size() == 1) return sub(w_prev, w_t);
    return sub(aggregate_record_without(record, c), w_t);
}

// Sticky norm-expansion test: once a layer has expanded it stays truncated.
inline bool examine_truncation(const InfluenceState& state, int layer, double mapped_norm,
                               double prev_norm) {
    if (state.layer_is_truncated(layer)) return true;
    return prev_norm > 0.0 && mapped_norm > prev_norm * (1.0 + kExamineTolerance);
}

namespace detail {

// Applies one participant's linearized local-update map to a layer slice of
// eps, choosing the Fisher or dense path per config.
inline std::vector<double> participant_apply(const ParticipantRecord& p, int layer,
                                             std::span<const double> eps_layer,
                                             const FederationConfig& config) {
    const int m = config.local_iterations;
    if (config.hessian_mode == HessianMode::exact_dense) {
        if (p.exact_hessians.empty())
            throw ShapeError("influence: record has no exact Hessians but "
                             "hessian mode is exact-dense");
        std::vector<DenseMatrix> hs;
        hs.reserve(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i)
            hs.push_back(p.exact_hessians[static_cast<std::size_t>(i)]
                                         [static_cast<std::size_t>(layer)]);
        return dense_reference_apply(hs, eps_layer, config.learning_rate);
    }
    if (p.sampled_grads.empty())
        throw ShapeError("influence: record has no sampled gradients");
    std::vector<GradBlock> blocks;
    blocks.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
        blocks.push_back(grad_block_view(p, i, layer, config.gradient_samples));
    return sequential_apply_fisher(blocks, eps_layer, config.learning_rate,
                                   config.gradient_samples);
}

// One participant's contribution to the sequential term of one (client,
// layer) slot, cached so fine-grained commits can exclude it again.
struct ParticipantTerm {
    int participant = 0;      // client id of the participant
    double weight = 0.0;      // n_k / N(C_t \ {c})
    double norm = 0.0;        // || Pi (I - eta H^k) eps ||
    std::vector<double> sigma;
};

struct LayerScratch {
    bool skipped = false;               // layer-wide truncation: nothing computed
    bool fully_dropped = false;         // fine mode: no live local term survived
    std::vector<double> mapped;         // weighted sum over live participants
    double mapped_norm = 0.0;
    std::vector<ParticipantTerm> terms; // fine mode only
};

struct ClientScratch {
    LayeredParams comb;
    std::vector<LayerScratch> layers;
};

inline void fold_rayleigh_probes(std::vector<LayerStats>& stats, const RoundRecord& record,
                                 int n_s) {
    for (const auto& p : record.participants) {
        if (p.sampled_grads.empty()) continue;
        for (const auto& per_block : p.sampled_grads) {
            for (std::size_t j = 0; j < per_block.size(); ++j) {
                const auto& flat = per_block[j];
                const int dim = static_cast<int>(flat.size()) / n_s;
                GradBlock block{flat.data(), n_s, dim};
                for (int z = 0; z < n_s; ++z) {
                    const auto g = block.sample(z);
                    const double norm = vec_norm(g);
                    if (norm <= 0.0) continue;
                    double rho = 0.0;
                    for (int z2 = 0; z2 < n_s; ++z2) {
                        const double d = vec_dot(block.sample(z2), g) / norm;
                        rho += d * d;
                    }
                    rho /= static_cast<double>(n_s);
                    stats[j].min_rho = std::min(stats[j].min_rho, rho);
                    stats[j].max_rho = std::max(stats[j].max_rho, rho);
                }
            }
        }
    }
}

} // namespace detail

// Size-weighted sum of per-participant sequential applications for every
// layer, honoring the layer-wide and fine-grained truncation flags.
inline std::vector<std::vector<double>> weighted_sequential(
    const InfluenceState& state, const RoundRecord& record, int c,
    const LayeredParams& eps_prev, const FederationConfig& config) {
    const int layers = static_cast<int>(eps_prev.layers.size());
    std::vector<std::vector<double>> out(static_cast<std::size_t>(layers));
    double total = 0.0;
    for (const auto& p : record.participants)
        if (p.client_id != c) total += p.n_k;
    for (int j = 0; j < layers; ++j) {
        auto& acc = out[static_cast<std::size_t>(j)];
        acc.assign(eps_prev.layers[static_cast<std::size_t>(j)].size(), 0.0);
        if (config.estimator_mode != EstimatorMode::basic && state.layer_is_truncated(j))
            continue;
        if (total <= 0.0) continue;
        for (const auto& p : record.participants) {
            if (p.client_id == c) continue;
            if (config.estimator_mode == EstimatorMode::lwet_fine &&
                state.participant_layer_truncated[static_cast<std::size_t>(p.client_id)]
                                                 [static_cast<std::size_t>(j)])
                continue; // dropped local term
            const auto sigma = detail::participant_apply(
                p, j, eps_prev.layers[static_cast<std::size_t>(j)], config);
            const double weight = p.n_k / total;
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weight * sigma[i];
        }
    }
    return out;
}

// One round of the influence recursion for every tracked client:
//   eps_t = M_t eps_{t-1} + combinatorial term      (live layers)
//   eps_t = combinatorial term                      (truncated layers)
// Examination verdicts are gathered across all clients first and the flags
// commit once at round end, so every client sees a consistent flag set and a
// layer that fires is already truncated in the committed eps_t.
inline InfluenceState update_influence(InfluenceState state, const RoundRecord& record,
                                       const LayeredParams& w_t, const LayeredParams& w_prev,
                                       const FederationConfig& config, int workers = 1) {
    if (record.round != state.round + 1)
        throw IndexError("update_influence: expected round " + std::to_string(state.round + 1) +
                         ", got record for round " + std::to_string(record.round));
    const int t = record.round;
    const int clients = state.clients;
    const int layers = state.layer_count();
    const EstimatorMode mode = config.estimator_mode;
    const bool fine = mode == EstimatorMode::lwet_fine;

    std::vector<detail::ClientScratch> scratch(static_cast<std::size_t>(clients));

    // Phase 1: sequential maps and combinatorial terms under the flags as of
    // round start. Tracked clients are independent here.
    parallel_for(clients, workers, [&](int c) {
        auto& s = scratch[static_cast<std::size_t>(c)];
        s.comb = combinatorial_influence(record, c, w_t, w_prev);
        s.layers.resize(static_cast<std::size_t>(layers));
        const auto& eps_prev = state.eps[static_cast<std::size_t>(c)];
        double total = 0.0;
        for (const auto& p : record.participants)
            if (p.client_id != c) total += p.n_k;

        for (int j = 0; j < layers; ++j) {
            auto& slot = s.layers[static_cast<std::size_t>(j)];
            if (mode != EstimatorMode::basic && state.layer_is_truncated(j)) {
                slot.skipped = true; // truncated layers consume no gradient samples
                continue;
            }
            const auto& eps_layer = eps_prev.layers[static_cast<std::size_t>(j)];
            slot.mapped.assign(eps_layer.size(), 0.0);
            if (total <= 0.0) continue;
            for (const auto& p : record.participants) {
                if (p.client_id == c) continue;
                if (fine && state.participant_layer_truncated
                                [static_cast<std::size_t>(p.client_id)]
                                [static_cast<std::size_t>(j)])
                    continue;
                detail::ParticipantTerm term;
                term.participant = p.client_id;
                term.weight = p.n_k / total;
                term.sigma = detail::participant_apply(p, j, eps_layer, config);
                term.norm = vec_norm(term.sigma);
                for (std::size_t i = 0; i < slot.mapped.size(); ++i)
                    slot.mapped[i] += term.weight * term.sigma[i];
                if (fine) slot.terms.push_back(std::move(term));
            }
            slot.mapped_norm = vec_norm(slot.mapped);
        }
    });

    // Phase 2: gather examination verdicts, then commit flags once.
    auto prev_norm = [&](int c, int j) {
        return vec_norm(state.eps[static_cast<std::size_t>(c)].layers[static_cast<std::size_t>(j)]);
    };
    if (mode == EstimatorMode::lwet) {
        for (int j = 0; j < layers; ++j) {
            if (state.layer_is_truncated(j)) continue;
            bool fired = false;
            for (int c = 0; c < clients; ++c) {
                const double prev = prev_norm(c, j);
                const double mapped = scratch[static_cast<std::size_t>(c)]
                                          .layers[static_cast<std::size_t>(j)].mapped_norm;
                if (prev > 0.0)
                    state.stats[static_cast<std::size_t>(j)].max_mapped_ratio =
                        std::max(state.stats[static_cast<std::size_t>(j)].max_mapped_ratio,
                                 mapped / prev);
                fired = fired || examine_truncation(state, j, mapped, prev);
            }
            if (fired) {
                state.layer_truncated[static_cast<std::size_t>(j)] = true;
                state.events.push_back({t, j, -1});
                if (state.stats[static_cast<std::size_t>(j)].truncation_round < 0)
                    state.stats[static_cast<std::size_t>(j)].truncation_round = t;
            }
        }
    } else if (fine) {
        std::vector<std::vector<bool>> newly(
            static_cast<std::size_t>(clients),
            std::vector<bool>(static_cast<std::size_t>(layers), false));
        for (int c = 0; c < clients; ++c)
            for (int j = 0; j < layers; ++j) {
                const double prev = prev_norm(c, j);
                if (prev <= 0.0) continue;
                for (const auto& term :
                     scratch[static_cast<std::size_t>(c)].layers[static_cast<std::size_t>(j)].terms) {
                    state.stats[static_cast<std::size_t>(j)].max_mapped_ratio =
                        std::max(state.stats[static_cast<std::size_t>(j)].max_mapped_ratio,
                                 term.norm / prev);
                    if (term.norm > prev * (1.0 + kExamineTolerance))
                        newly[static_cast<std::size_t>(term.participant)]
                             [static_cast<std::size_t>(j)] = true;
                }
            }
        for (int k = 0; k < clients; ++k)
            for (int j = 0; j < layers; ++j)
                if (newly[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] &&
                    !state.participant_layer_truncated[static_cast<std::size_t>(k)]
                                                      [static_cast<std::size_t>(j)]) {
                    state.participant_layer_truncated[static_cast<std::size_t>(k)]
                                                     [static_cast<std::size_t>(j)] = true;
                    state.events.push_back({t, j, k});
                    if (state.stats[static_cast<std::size_t>(j)].truncation_round < 0)
                        state.stats[static_cast<std::size_t>(j)].truncation_round = t;
                }
    } else {
        // basic mode: keep the expansion ratios for diagnostics, set no flags.
        for (int j = 0; j < layers; ++j)
            for (int c = 0; c < clients; ++c) {
                const double prev = prev_norm(c, j);
                if (prev > 0.0)
                    state.stats[static_cast<std::size_t>(j)].max_mapped_ratio =
                        std::max(state.stats[static_cast<std::size_t>(j)].max_mapped_ratio,
                                 scratch[static_cast<std::size_t>(c)]
                                         .layers[static_cast<std::size_t>(j)].mapped_norm / prev);
            }
    }

    // Phase 3: commit eps under the post-examination flags.
    for (int c = 0; c < clients; ++c) {
        auto& s = scratch[static_cast<std::size_t>(c)];
        auto& eps = state.eps[static_cast<std::size_t>(c)];
        state.max_comb_norm = std::max(state.max_comb_norm, l2_norm(s.comb));
        for (int j = 0; j < layers; ++j) {
            auto& target = eps.layers[static_cast<std::size_t>(j)];
            const auto& comb = s.comb.layers[static_cast<std::size_t>(j)];
            auto& slot = s.layers[static_cast<std::size_t>(j)];
            bool dropped = false;
            if (mode == EstimatorMode::lwet)
                dropped = state.layer_is_truncated(j) || slot.skipped;
            else if (fine)
                dropped = slot.skipped;

            if (dropped) {
                target = comb;
            } else if (fine) {
                // Re-sum over participants still live after this round's
                // verdicts; newly flagged local terms drop out immediately.
                std::vector<double> mapped(target.size(), 0.0);
                bool any_live = false;
                for (const auto& term : slot.terms) {
                    if (state.participant_layer_truncated
                            [static_cast<std::size_t>(term.participant)]
                            [static_cast<std::size_t>(j)])
                        continue;
                    any_live = true;
                    for (std::size_t i = 0; i < mapped.size(); ++i)
                        mapped[i] += term.weight * term.sigma[i];
                }
                bool had_other_participants = false;
                for (const auto& p : record.participants)
                    if (p.client_id != c) { had_other_participants = true; break; }
                slot.fully_dropped = !any_live && had_other_participants;
                if (slot.fully_dropped) {
                    target = comb;
                } else {
                    for (std::size_t i = 0; i < target.size(); ++i)
                        target[i] = mapped[i] + comb[i];
                }
            } else {
                for (std::size_t i = 0; i < target.size(); ++i)
                    target[i] = slot.mapped[i] + comb[i];
            }
        }
        // Overflow guard: stop rather than propagate a blowup silently.
        for (int j = 0; j < layers; ++j)
            for (double v : eps.layers[static_cast<std::size_t>(j)])
                if (!std::isfinite(v) || std::abs(v) > config.overflow_guard)
                    throw OverflowError("influence overflow: client " + std::to_string(c) +
                                        ", layer " + std::to_string(j) + ", round " +
                                        std::to_string(t));
        for (int j = 0; j < layers; ++j) {
            const auto& slot = s.layers[static_cast<std::size_t>(j)];
            HistoryRow row;
            row.round = t;
            row.client = c;
            row.layer = j;
            row.eps_norm = vec_norm(eps.layers[static_cast<std::size_t>(j)]);
            row.mapped_norm = slot.skipped ? 0.0 : slot.mapped_norm;
            if (mode == EstimatorMode::basic)
                row.truncated = false;
            else if (mode == EstimatorMode::lwet)
                row.truncated = state.layer_is_truncated(j);
            else
                row.truncated = slot.skipped || slot.fully_dropped;
            state.history.push_back(row);
        }
    }

    detail::fold_rayleigh_probes(state.stats, record, config.gradient_samples);
    state.round = t;
    return state;
}

// Structured-text snapshot of the estimator state history:
// round, client, layer, eps norm, truncated flag. Tab-separated.
inline std::string export_state_history(const InfluenceState& state) {
    std::string out = "round\tclient\tlayer\teps_norm\ttruncated\n";
    char buf[96];
    for (const auto& row : state.history) {
        std::snprintf(buf, sizeof buf, "%d\t%d\t%d\t%.17g\t%d\n", row.round, row.client,
                      row.layer, row.eps_norm, row.truncated ? 1 : 0);
        out += buf;
    }
    return out;
}

struct LayerDiagnostics {
    int layer = 0;
    double lambda_hat = 0.0;
    double Lambda_hat = 0.0;
    double alpha_hat = 1.0;
    double gamma_hat = 1.0;
    double max_mapped_ratio = 0.0;
    int case_label = 2;       // 1 contraction, 2 neutral, 3 expansion
    int truncation_round = -1;
};

struct DiagnosticsReport {
    std::vector<LayerDiagnostics> layers;
};

// Curvature and contraction estimates per layer: lambda/Lambda bounds from
// Rayleigh quotients of the sampled-gradient outer products, the implied
// per-round contraction gamma = alpha^m, and the case classification. An
// observed norm expansion (mapped ratio > 1 or a truncation event) is direct
// evidence of expansion, so it dominates the classification.
inline DiagnosticsReport compute_diagnostics(const InfluenceState& state,
                                             std::span<const RoundRecord> extra_records,
                                             const FederationConfig& config) {
    if (state.round < 1 && extra_records.empty())
        throw EmptyInputError("compute_diagnostics: no completed rounds");
    std::vector<LayerStats> stats = state.stats;
    for (const auto& rec : extra_records)
        detail::fold_rayleigh_probes(stats, rec, config.gradient_samples);

    DiagnosticsReport report;
    const double eta = config.learning_rate;
    for (std::size_t j = 0; j < stats.size(); ++j) {
        LayerDiagnostics d;
        d.layer = static_cast<int>(j);
        if (stats[j].has_probes()) {
            d.lambda_hat = stats[j].min_rho;
            d.Lambda_hat = stats[j].max_rho;
        }
        d.alpha_hat = std::max(std::abs(1.0 - eta * d.lambda_hat),
                               std::abs(1.0 - eta * d.Lambda_hat));
        d.gamma_hat = std::pow(d.alpha_hat, config.local_iterations);
        d.max_mapped_ratio = stats[j].max_mapped_ratio;
        d.gamma_hat = std::max(d.gamma_hat, d.max_mapped_ratio);
        d.truncation_round = stats[j].truncation_round;
        if (d.truncation_round >= 0 || d.gamma_hat > 1.001) d.case_label = 3;
        else if (d.gamma_hat < 0.999) d.case_label = 1;
        else d.case_label = 2;
        report.layers.push_back(d);
    }
    return report;
}

} // namespace fedfluence
