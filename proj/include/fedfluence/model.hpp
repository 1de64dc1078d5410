#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fedfluence/errors.hpp"
#include "fedfluence/layered.hpp"
#include "fedfluence/linalg.hpp"
#include "fedfluence/rng.hpp"

namespace fedfluence {

struct LabeledSample {
    std::vector<double> features;
    int label = 0;
};

using Dataset = std::vector<LabeledSample>;

enum class ModelKind { logistic_regression, mlp };
enum class Activation { identity, relu };

// Layered softmax classifier: zero or more dense hidden layers followed by
// a softmax output, trained with mean cross-entropy. Logistic regression is
// the zero-hidden-layer case. Parameter blocks alternate weight/bias per
// dense layer: [W1, b1, W2, b2, ...], weights row-major (out x in).
struct ModelSpec {
    ModelKind kind = ModelKind::logistic_regression;
    int input_dim = 0;
    int classes = 0;
    std::vector<int> hidden;
    Activation activation = Activation::relu;

    void validate() const {
        if (input_dim < 1) throw ConfigError("ModelSpec: input_dim must be >= 1");
        if (classes < 2) throw ConfigError("ModelSpec: classes must be >= 2");
        if (kind == ModelKind::logistic_regression && !hidden.empty())
            throw ConfigError("ModelSpec: logistic regression cannot have hidden layers");
        for (int h : hidden)
            if (h < 1) throw ConfigError("ModelSpec: hidden sizes must be >= 1");
    }

    // Widths of the dense layers including input and output.
    std::vector<int> widths() const {
        std::vector<int> w;
        w.push_back(input_dim);
        for (int h : hidden) w.push_back(h);
        w.push_back(classes);
        return w;
    }

    Layout layout() const {
        const auto w = widths();
        Layout out;
        for (std::size_t l = 0; l + 1 < w.size(); ++l) {
            out.push_back({w[l + 1], w[l]}); // weight
            out.push_back({w[l + 1], 1});    // bias
        }
        return out;
    }

    int dense_layer_count() const { return static_cast<int>(hidden.size()) + 1; }
    int block_count() const { return 2 * dense_layer_count(); }
};

inline ModelSpec logistic_regression_spec(int input_dim, int classes) {
    ModelSpec s;
    s.kind = ModelKind::logistic_regression;
    s.input_dim = input_dim;
    s.classes = classes;
    s.activation = Activation::identity;
    s.validate();
    return s;
}

inline ModelSpec mlp_spec(int input_dim, int classes, std::vector<int> hidden,
                          Activation act = Activation::relu) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.input_dim = input_dim;
    s.classes = classes;
    s.hidden = std::move(hidden);
    s.activation = act;
    s.validate();
    return s;
}

// Gaussian init, one fixed fill order so a seed pins every coordinate.
inline LayeredParams init_params(const ModelSpec& spec, std::uint64_t init_seed,
                                 double stddev = 0.01) {
    LayeredParams params(spec.layout());
    Rng rng(derive_seed(init_seed, SeedStream::model_init));
    for (auto& layer : params.layers)
        for (auto& v : layer) v = rng.normal(0.0, stddev);
    return params;
}

namespace detail {

inline void check_params_shape(const ModelSpec& spec, const LayeredParams& params) {
    const Layout expect = spec.layout();
    if (params.layers.size() != expect.size())
        throw ShapeError("params block count does not match model spec");
    for (std::size_t j = 0; j < expect.size(); ++j)
        if (static_cast<int>(params.layers[j].size()) != expect[j].size())
            throw ShapeError("params block " + std::to_string(j) + " has wrong length");
}

struct ForwardTrace {
    // activations[l] is the input to dense layer l; activations.back() is the
    // output-layer pre-activation (logits).
    std::vector<std::vector<double>> activations;
    std::vector<std::vector<double>> preacts;
    std::vector<double> probs;
    double log_loss = 0.0; // filled when a label is supplied
};

inline std::vector<double> softmax_stable(std::span<const double> logits) {
    double zmax = logits[0];
    for (double z : logits) zmax = std::max(zmax, z);
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - zmax);
        total += p[i];
    }
    for (auto& v : p) v /= total;
    return p;
}

// -log softmax(logits)[label], evaluated without forming probabilities.
inline double cross_entropy_from_logits(std::span<const double> logits, int label) {
    double zmax = logits[0];
    for (double z : logits) zmax = std::max(zmax, z);
    double total = 0.0;
    for (double z : logits) total += std::exp(z - zmax);
    return std::log(total) + zmax - logits[static_cast<std::size_t>(label)];
}

inline ForwardTrace forward_trace(const ModelSpec& spec, const LayeredParams& params,
                                  std::span<const double> x, int label = -1) {
    if (static_cast<int>(x.size()) != spec.input_dim)
        throw ShapeError("forward: feature vector length does not match input_dim");
    check_params_shape(spec, params);

    ForwardTrace trace;
    trace.activations.emplace_back(x.begin(), x.end());
    const int dense_layers = spec.dense_layer_count();
    for (int l = 0; l < dense_layers; ++l) {
        const auto& w = params.layers[static_cast<std::size_t>(2 * l)];
        const auto& b = params.layers[static_cast<std::size_t>(2 * l + 1)];
        const auto& in = trace.activations.back();
        const int out_dim = static_cast<int>(b.size());
        const int in_dim = static_cast<int>(in.size());
        std::vector<double> z(static_cast<std::size_t>(out_dim));
        for (int r = 0; r < out_dim; ++r) {
            double acc = b[static_cast<std::size_t>(r)];
            const double* row = w.data() + static_cast<std::size_t>(r) * in_dim;
            for (int cidx = 0; cidx < in_dim; ++cidx) acc += row[cidx] * in[static_cast<std::size_t>(cidx)];
            z[static_cast<std::size_t>(r)] = acc;
        }
        trace.preacts.push_back(z);
        if (l + 1 < dense_layers) {
            std::vector<double> a = z;
            if (spec.activation == Activation::relu)
                for (auto& v : a) v = std::max(0.0, v);
            trace.activations.push_back(std::move(a));
        } else {
            trace.activations.push_back(z); // logits, softmax applied by caller
        }
    }
    const auto& logits = trace.preacts.back();
    trace.probs = softmax_stable(logits);
    if (label >= 0) trace.log_loss = cross_entropy_from_logits(logits, label);
    return trace;
}

// Backprop for one sample, accumulating scaled gradients into `grad_out`.
inline void accumulate_sample_grad(const ModelSpec& spec, const LayeredParams& params,
                                   const ForwardTrace& trace, int label, double scale,
                                   LayeredParams& grad_out) {
    const int dense_layers = spec.dense_layer_count();
    std::vector<double> delta = trace.probs;
    delta[static_cast<std::size_t>(label)] -= 1.0;
    for (int l = dense_layers - 1; l >= 0; --l) {
        const auto& in = trace.activations[static_cast<std::size_t>(l)];
        auto& gw = grad_out.layers[static_cast<std::size_t>(2 * l)];
        auto& gb = grad_out.layers[static_cast<std::size_t>(2 * l + 1)];
        const int out_dim = static_cast<int>(delta.size());
        const int in_dim = static_cast<int>(in.size());
        for (int r = 0; r < out_dim; ++r) {
            const double d = delta[static_cast<std::size_t>(r)] * scale;
            double* grow = gw.data() + static_cast<std::size_t>(r) * in_dim;
            for (int cidx = 0; cidx < in_dim; ++cidx) grow[cidx] += d * in[static_cast<std::size_t>(cidx)];
            gb[static_cast<std::size_t>(r)] += d;
        }
        if (l > 0) {
            const auto& w = params.layers[static_cast<std::size_t>(2 * l)];
            const auto& z_prev = trace.preacts[static_cast<std::size_t>(l - 1)];
            std::vector<double> next(static_cast<std::size_t>(in_dim), 0.0);
            for (int cidx = 0; cidx < in_dim; ++cidx) {
                double acc = 0.0;
                for (int r = 0; r < out_dim; ++r)
                    acc += w[static_cast<std::size_t>(r) * in_dim + cidx] *
                           delta[static_cast<std::size_t>(r)];
                if (spec.activation == Activation::relu &&
                    z_prev[static_cast<std::size_t>(cidx)] <= 0.0)
                    acc = 0.0;
                next[static_cast<std::size_t>(cidx)] = acc;
            }
            delta = std::move(next);
        }
    }
}

} // namespace detail

inline std::vector<double> forward(const ModelSpec& spec, const LayeredParams& params,
                                   std::span<const double> x) {
    return detail::forward_trace(spec, params, x).probs;
}

inline double loss(const ModelSpec& spec, const LayeredParams& params,
                   std::span<const LabeledSample> dataset) {
    if (dataset.empty()) throw EmptyInputError("loss: dataset is empty");
    double total = 0.0;
    for (const auto& z : dataset) {
        if (z.label < 0 || z.label >= spec.classes)
            throw ShapeError("loss: label out of range");
        total += detail::forward_trace(spec, params, z.features, z.label).log_loss;
    }
    return total / static_cast<double>(dataset.size());
}

// Gradient of the mean cross-entropy over `dataset` w.r.t. every block.
inline LayeredParams grad(const ModelSpec& spec, const LayeredParams& params,
                          std::span<const LabeledSample> dataset) {
    if (dataset.empty()) throw EmptyInputError("grad: dataset is empty");
    detail::check_params_shape(spec, params);
    LayeredParams g(spec.layout());
    for (const auto& z : dataset) {
        if (z.label < 0 || z.label >= spec.classes)
            throw ShapeError("grad: label out of range");
        const auto trace = detail::forward_trace(spec, params, z.features);
        detail::accumulate_sample_grad(spec, params, trace, z.label, 1.0, g);
    }
    const double inv_n = 1.0 / static_cast<double>(dataset.size());
    for (auto& layer : g.layers)
        for (auto& v : layer) v *= inv_n;
    if (!all_finite(g)) throw Error("grad: non-finite gradient");
    return g;
}

// Single-sample loss gradient over all blocks.
inline LayeredParams per_example_grad_all(const ModelSpec& spec, const LayeredParams& params,
                                          const LabeledSample& z) {
    detail::check_params_shape(spec, params);
    if (z.label < 0 || z.label >= spec.classes)
        throw ShapeError("per_example_grad: label out of range");
    LayeredParams g(spec.layout());
    const auto trace = detail::forward_trace(spec, params, z.features);
    detail::accumulate_sample_grad(spec, params, trace, z.label, 1.0, g);
    return g;
}

inline std::vector<double> per_example_grad(const ModelSpec& spec, const LayeredParams& params,
                                            const LabeledSample& z, int layer) {
    if (layer < 0 || layer >= spec.block_count())
        throw IndexError("per_example_grad: layer index out of range");
    return per_example_grad_all(spec, params, z).layers[static_cast<std::size_t>(layer)];
}

inline double accuracy(const ModelSpec& spec, const LayeredParams& params,
                       std::span<const LabeledSample> dataset) {
    if (dataset.empty()) throw EmptyInputError("accuracy: dataset is empty");
    int correct = 0;
    for (const auto& z : dataset) {
        const auto probs = forward(spec, params, z.features);
        int best = 0; // ties resolve to the lowest class index
        for (int c = 1; c < spec.classes; ++c)
            if (probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(best)]) best = c;
        if (best == z.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

namespace detail {

// Closed-form layer Hessian for logistic regression. For the weight block,
// H[(c1,i1),(c2,i2)] = mean_s (p[c1](1{c1==c2} - p[c2]) x[i1] x[i2]);
// the bias block drops the feature factors.
inline DenseMatrix logreg_layer_hessian(const ModelSpec& spec, const LayeredParams& params,
                                        std::span<const LabeledSample> dataset, int layer) {
    const bool weight_block = (layer == 0);
    const int d = spec.input_dim;
    const int C = spec.classes;
    const int n = weight_block ? C * d : C;
    DenseMatrix h(n);
    for (const auto& z : dataset) {
        const auto probs = forward(spec, params, z.features);
        for (int c1 = 0; c1 < C; ++c1) {
            for (int c2 = 0; c2 < C; ++c2) {
                const double a = probs[static_cast<std::size_t>(c1)] *
                                 ((c1 == c2 ? 1.0 : 0.0) - probs[static_cast<std::size_t>(c2)]);
                if (weight_block) {
                    for (int i1 = 0; i1 < d; ++i1)
                        for (int i2 = 0; i2 < d; ++i2)
                            h.at(c1 * d + i1, c2 * d + i2) +=
                                a * z.features[static_cast<std::size_t>(i1)] *
                                z.features[static_cast<std::size_t>(i2)];
                } else {
                    h.at(c1, c2) += a;
                }
            }
        }
    }
    const double inv_n = 1.0 / static_cast<double>(dataset.size());
    for (auto& v : h.flat()) v *= inv_n;
    return h;
}

// Central finite differences of the layer-restricted gradient; the result is
// symmetrized since the finite-difference noise is what breaks symmetry.
inline DenseMatrix fd_layer_hessian(const ModelSpec& spec, const LayeredParams& params,
                                    std::span<const LabeledSample> dataset, int layer,
                                    double h_step = 1e-5) {
    const int n = static_cast<int>(params.layers[static_cast<std::size_t>(layer)].size());
    DenseMatrix h(n);
    LayeredParams probe = params;
    auto& block = probe.layers[static_cast<std::size_t>(layer)];
    for (int col = 0; col < n; ++col) {
        const double saved = block[static_cast<std::size_t>(col)];
        block[static_cast<std::size_t>(col)] = saved + h_step;
        const auto gp = grad(spec, probe, dataset).layers[static_cast<std::size_t>(layer)];
        block[static_cast<std::size_t>(col)] = saved - h_step;
        const auto gm = grad(spec, probe, dataset).layers[static_cast<std::size_t>(layer)];
        block[static_cast<std::size_t>(col)] = saved;
        for (int row = 0; row < n; ++row)
            h.at(row, col) = (gp[static_cast<std::size_t>(row)] -
                              gm[static_cast<std::size_t>(row)]) / (2.0 * h_step);
    }
    h.symmetrize();
    return h;
}

} // namespace detail

// Exact dense Hessian of the layer-restricted loss (other blocks frozen).
// Logistic regression uses the closed form; MLP blocks fall back to central
// finite differences of the gradient.
inline DenseMatrix exact_layer_hessian(const ModelSpec& spec, const LayeredParams& params,
                                       std::span<const LabeledSample> dataset, int layer,
                                       int dense_cap = 5000) {
    if (dataset.empty()) throw EmptyInputError("exact_layer_hessian: dataset is empty");
    if (layer < 0 || layer >= spec.block_count())
        throw IndexError("exact_layer_hessian: layer index out of range");
    detail::check_params_shape(spec, params);
    const int len = static_cast<int>(params.layers[static_cast<std::size_t>(layer)].size());
    if (len > dense_cap)
        throw CapacityError("exact_layer_hessian: block length " + std::to_string(len) +
                            " exceeds dense cap " + std::to_string(dense_cap));
    if (spec.hidden.empty())
        return detail::logreg_layer_hessian(spec, params, dataset, layer);
    return detail::fd_layer_hessian(spec, params, dataset, layer);
}

} // namespace fedfluence
