#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace fedfluence {

// Static-chunk parallel loop over [0, n). Results must be written to
// per-index slots by the body; chunk assignment is deterministic, so output
// never depends on scheduling. workers <= 1 runs inline.
inline void parallel_for(int n, int workers, const std::function<void(int)>& body) {
    if (n <= 0) return;
    if (workers <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    const int used = std::min(workers, n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(used));
    pool.reserve(static_cast<std::size_t>(used));
    for (int w = 0; w < used; ++w) {
        pool.emplace_back([&, w] {
            const int begin = static_cast<int>(static_cast<long long>(n) * w / used);
            const int end = static_cast<int>(static_cast<long long>(n) * (w + 1) / used);
            try {
                for (int i = begin; i < end; ++i) body(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace fedfluence
