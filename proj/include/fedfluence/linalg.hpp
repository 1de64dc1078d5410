#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fedfluence/errors.hpp"

namespace fedfluence {

// Small dense square matrix used by the exact-Hessian path. The estimator's
// linear-cost path must never build one of these; the construction counter
// lets tests assert that structurally.
class DenseMatrix {
public:
    DenseMatrix() { ++construction_counter(); }

    explicit DenseMatrix(int n) : n_(n), data_(static_cast<std::size_t>(n) * n, 0.0) {
        ++construction_counter();
    }

    DenseMatrix(const DenseMatrix& other) : n_(other.n_), data_(other.data_) {
        ++construction_counter();
    }

    DenseMatrix(DenseMatrix&& other) noexcept
        : n_(other.n_), data_(std::move(other.data_)) {
        ++construction_counter();
    }

    DenseMatrix& operator=(const DenseMatrix&) = default;
    DenseMatrix& operator=(DenseMatrix&&) = default;

    int size() const { return n_; }

    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * n_ + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * n_ + j]; }

    std::span<const double> flat() const { return data_; }
    std::span<double> flat() { return data_; }

    // y = A x
    std::vector<double> apply(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != n_)
            throw ShapeError("DenseMatrix::apply: vector length mismatch");
        std::vector<double> y(static_cast<std::size_t>(n_), 0.0);
        for (int i = 0; i < n_; ++i) {
            double acc = 0.0;
            const double* row = data_.data() + static_cast<std::size_t>(i) * n_;
            for (int j = 0; j < n_; ++j) acc += row[j] * x[static_cast<std::size_t>(j)];
            y[static_cast<std::size_t>(i)] = acc;
        }
        return y;
    }

    double max_asymmetry() const {
        double m = 0.0;
        for (int i = 0; i < n_; ++i)
            for (int j = i + 1; j < n_; ++j)
                m = std::max(m, std::abs(at(i, j) - at(j, i)));
        return m;
    }

    void symmetrize() {
        for (int i = 0; i < n_; ++i)
            for (int j = i + 1; j < n_; ++j) {
                const double v = 0.5 * (at(i, j) + at(j, i));
                at(i, j) = v;
                at(j, i) = v;
            }
    }

    static std::uint64_t constructions() { return construction_counter().load(); }

private:
    static std::atomic<std::uint64_t>& construction_counter() {
        static std::atomic<std::uint64_t> counter{0};
        return counter;
    }

    int n_ = 0;
    std::vector<double> data_;
};

// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
// Only used on small validation matrices.
inline std::vector<double> symmetric_eigenvalues(const DenseMatrix& input,
                                                 int max_sweeps = 64) {
    const int n = input.size();
    DenseMatrix a = input;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
        if (off < 1e-28) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a.at(k, p);
                    const double akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a.at(p, k);
                    const double aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) eig[static_cast<std::size_t>(i)] = a.at(i, i);
    std::sort(eig.begin(), eig.end());
    return eig;
}

} // namespace fedfluence
