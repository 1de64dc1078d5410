#pragma once

#include <span>
#include <string_view>

namespace fedfluence {

// Built-in experiment presets; the same texts ship as files under presets/.
struct PresetInfo {
    std::string_view name;
    std::string_view description;
    std::string_view text;
};

inline std::span<const PresetInfo> builtin_presets() {
    static const PresetInfo presets[] = {
    {"convex-small",
     "logistic regression, non-IID unbalanced, full oracle; influence-on-loss correlation study",
     R"PRESET(# convex-small: logistic regression on a non-IID unbalanced synthetic
# federation, small enough for a full leave-one-out oracle over all clients.

[model]
kind = logreg
activation = identity

[data]
source = synth
input_dim = 8
classes = 3
skew = noniid-unbalanced
data_seed = 1001
min_samples = 20
samples_per_client = 20
test_fraction = 0.2

[federation]
learning_rate = 0.02
clients = 20
participants_per_round = 5
local_iterations = 5
rounds = 100
gradient_samples = 20
selection_seed = 2002
init_seed = 3003
estimator_mode = auto
hessian_mode = auto
overflow_guard = 1e30
dense_cap = 5000

[experiment]
name = convex-small
kind = fil-correlation
evaluation_rounds = auto
oracle_cap = -1
experiment_seed = 4004
self_test = false
cleansing_round = 50
cleansing_fraction = 0.2
cleansing_strategy = all
cleansing_metric = fil
fraction_sweep = 0.1,0.2,0.3
repeats = 5
output = convex-small.csv
workers = 1
)PRESET"},
    {"nonconvex-small",
     "small ReLU network, IID balanced; per-round estimation-error study",
     R"PRESET(# nonconvex-small: a small ReLU network on an IID balanced synthetic
# federation; Hessians come from sampled gradient outer products.

[model]
kind = mlp
hidden = 32
activation = relu

[data]
source = synth
input_dim = 8
classes = 3
skew = iid-balanced
data_seed = 1101
min_samples = 40
samples_per_client = 40
test_fraction = 0.2

[federation]
learning_rate = 0.2
clients = 20
participants_per_round = 5
local_iterations = 2
rounds = 150
gradient_samples = 20
selection_seed = 2002
init_seed = 3003
estimator_mode = auto
hessian_mode = fisher
overflow_guard = 1e30
dense_cap = 5000

[experiment]
name = nonconvex-small
kind = fip-error
evaluation_rounds = auto
oracle_cap = 6
experiment_seed = 4004
self_test = false
cleansing_round = 50
cleansing_fraction = 0.2
cleansing_strategy = all
cleansing_metric = fil
fraction_sweep = 0.1,0.2,0.3
repeats = 5
output = nonconvex-small.csv
workers = 1
)PRESET"},
    {"blowup-demo",
     "nonconvex-small with 10x learning rate and raised guards; shows why truncation is needed",
     R"PRESET(# blowup-demo: nonconvex-small with a 10x learning rate and raised
# overflow guards, demonstrating why layer truncation is needed.

[model]
kind = mlp
hidden = 32
activation = relu

[data]
source = synth
input_dim = 8
classes = 3
skew = iid-balanced
data_seed = 1101
min_samples = 40
samples_per_client = 40
test_fraction = 0.2

[federation]
learning_rate = 2
clients = 20
participants_per_round = 5
local_iterations = 2
rounds = 150
gradient_samples = 20
selection_seed = 2002
init_seed = 3003
estimator_mode = auto
hessian_mode = fisher
overflow_guard = 1e250
dense_cap = 5000

[experiment]
name = blowup-demo
kind = fip-error
evaluation_rounds = auto
oracle_cap = 6
experiment_seed = 4004
self_test = false
cleansing_round = 50
cleansing_fraction = 0.2
cleansing_strategy = all
cleansing_metric = fil
fraction_sweep = 0.1,0.2,0.3
repeats = 5
output = blowup-demo.csv
workers = 1
)PRESET"},
    };
    return presets;
}

inline const PresetInfo* find_preset(std::string_view name) {
    for (const auto& p : builtin_presets())
        if (p.name == name) return &p;
    return nullptr;
}

} // namespace fedfluence
