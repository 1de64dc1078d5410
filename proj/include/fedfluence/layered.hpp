#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedfluence/errors.hpp"

namespace fedfluence {

// One parameter block: a (rows x cols) weight matrix stored row-major,
// or a bias vector (cols == 1).
struct LayerShape {
    int rows = 0;
    int cols = 0;

    int size() const { return rows * cols; }
    bool operator==(const LayerShape&) const = default;
};

using Layout = std::vector<LayerShape>;

// Model parameters partitioned into per-layer flat blocks. All arithmetic
// is blockwise and preserves the layout.
struct LayeredParams {
    Layout layout;
    std::vector<std::vector<double>> layers;

    LayeredParams() = default;

    explicit LayeredParams(Layout shape) : layout(std::move(shape)) {
        layers.reserve(layout.size());
        for (const auto& s : layout)
            layers.emplace_back(static_cast<std::size_t>(s.size()), 0.0);
    }

    std::size_t layer_count() const { return layers.size(); }

    bool same_layout(const LayeredParams& other) const {
        if (layers.size() != other.layers.size()) return false;
        for (std::size_t j = 0; j < layers.size(); ++j)
            if (layers[j].size() != other.layers[j].size()) return false;
        return true;
    }
};

inline void require_same_layout(const LayeredParams& a, const LayeredParams& b,
                                const char* op) {
    if (!a.same_layout(b))
        throw ShapeError(std::string(op) + ": operands have different layouts");
}

inline LayeredParams zeros_like(const LayeredParams& a) {
    LayeredParams out;
    out.layout = a.layout;
    out.layers.reserve(a.layers.size());
    for (const auto& l : a.layers) out.layers.emplace_back(l.size(), 0.0);
    return out;
}

inline LayeredParams add(const LayeredParams& a, const LayeredParams& b) {
    require_same_layout(a, b, "add");
    LayeredParams out = a;
    for (std::size_t j = 0; j < out.layers.size(); ++j)
        for (std::size_t i = 0; i < out.layers[j].size(); ++i)
            out.layers[j][i] += b.layers[j][i];
    return out;
}

inline LayeredParams sub(const LayeredParams& a, const LayeredParams& b) {
    require_same_layout(a, b, "sub");
    LayeredParams out = a;
    for (std::size_t j = 0; j < out.layers.size(); ++j)
        for (std::size_t i = 0; i < out.layers[j].size(); ++i)
            out.layers[j][i] -= b.layers[j][i];
    return out;
}

inline LayeredParams scaled(const LayeredParams& a, double s) {
    LayeredParams out = a;
    for (auto& layer : out.layers)
        for (auto& v : layer) v *= s;
    return out;
}

// a += s * b
inline void add_scaled_in_place(LayeredParams& a, double s, const LayeredParams& b) {
    require_same_layout(a, b, "add_scaled_in_place");
    for (std::size_t j = 0; j < a.layers.size(); ++j)
        for (std::size_t i = 0; i < a.layers[j].size(); ++i)
            a.layers[j][i] += s * b.layers[j][i];
}

inline double l2_norm_squared(const LayeredParams& a) {
    double acc = 0.0;
    for (const auto& layer : a.layers)
        for (double v : layer) acc += v * v;
    return acc;
}

inline double l2_norm(const LayeredParams& a) { return std::sqrt(l2_norm_squared(a)); }

inline double max_abs(const LayeredParams& a) {
    double m = 0.0;
    for (const auto& layer : a.layers)
        for (double v : layer) m = std::max(m, std::abs(v));
    return m;
}

inline double max_abs_diff(const LayeredParams& a, const LayeredParams& b) {
    require_same_layout(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t j = 0; j < a.layers.size(); ++j)
        for (std::size_t i = 0; i < a.layers[j].size(); ++i)
            m = std::max(m, std::abs(a.layers[j][i] - b.layers[j][i]));
    return m;
}

inline bool all_finite(const LayeredParams& a) {
    for (const auto& layer : a.layers)
        for (double v : layer)
            if (!std::isfinite(v)) return false;
    return true;
}

inline double vec_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

inline double vec_dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("vec_dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

} // namespace fedfluence
