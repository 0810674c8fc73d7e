#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace flowalign {

// Strided index parallelism for independent work items. Each index must write
// only to its own slot; reductions over the slots stay order-fixed, so the
// result is identical for any worker count.
inline void parallel_for(int n, int workers, const std::function<void(int)>& body) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    const int used = std::min(workers, n);
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(used));
    for (int w = 0; w < used; ++w) {
        threads.emplace_back([&, w] {
            for (int i = w; i < n; i += used) {
                body(i);
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
}

}  // namespace flowalign
