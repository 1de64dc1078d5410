#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "fedfluence/errors.hpp"
#include "fedfluence/model.hpp"

namespace fedfluence {

// Influence on test loss: evaluate the model shifted by the (exact or
// estimated) parameter influence and subtract the unshifted loss.
inline double fil(const ModelSpec& spec, const LayeredParams& w_t, const LayeredParams& eps,
                  std::span<const LabeledSample> test_set) {
    if (test_set.empty()) throw EmptyInputError("fil: test set is empty");
    return loss(spec, add(w_t, eps), test_set) - loss(spec, w_t, test_set);
}

// Influence on test accuracy, in [-1, 1].
inline double fia(const ModelSpec& spec, const LayeredParams& w_t, const LayeredParams& eps,
                  std::span<const LabeledSample> test_set) {
    if (test_set.empty()) throw EmptyInputError("fia: test set is empty");
    return accuracy(spec, add(w_t, eps), test_set) - accuracy(spec, w_t, test_set);
}

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw ShapeError("pearson: length mismatch");
    const std::size_t n = xs.size();
    if (n < 2) throw EmptyInputError("pearson: need at least 2 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) { mx += xs[i]; my += ys[i]; }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0)
        throw CorrelationError("pearson: zero variance input");
    return sxy / std::sqrt(sxx * syy);
}

enum class RankDirection { valuable_first, harmful_first };
enum class ValueMetric { fil, fia };

// Orders clients by value. High influence-on-loss means removing the client
// hurts (valuable); low influence-on-accuracy means the same. Ties always
// break by ascending client id.
inline std::vector<int> rank_clients(const std::map<int, double>& values,
                                     RankDirection direction, ValueMetric metric) {
    if (values.empty()) throw EmptyInputError("rank_clients: empty value map");
    std::vector<std::pair<int, double>> items(values.begin(), values.end());
    const bool descending = (metric == ValueMetric::fil) ==
                            (direction == RankDirection::valuable_first);
    std::stable_sort(items.begin(), items.end(), [&](const auto& a, const auto& b) {
        if (a.second != b.second) return descending ? a.second > b.second : a.second < b.second;
        return a.first < b.first;
    });
    std::vector<int> out;
    out.reserve(items.size());
    for (const auto& [id, v] : items) out.push_back(id);
    return out;
}

} // namespace fedfluence
