#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace psiflow::harness {

inline std::size_t resolve_threads(std::size_t requested)
{
    if (requested > 0)
        return requested;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// out[i] = f(i) for i < count on a pool of workers. Results come back in index order,
/// so the output does not depend on the thread count. The first exception is rethrown.
template <class F>
auto parallel_map(std::size_t count, std::size_t threads, F&& f) -> std::vector<decltype(f(std::size_t{}))>
{
    using T = decltype(f(std::size_t{}));
    std::vector<T> out(count);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (;;)
        {
            std::size_t i = next.fetch_add(1);
            if (i >= count)
                return;
            try
            {
                out[i] = f(i);
            }
            catch (...)
            {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                next = count;
                return;
            }
        }
    };
    const std::size_t workers = std::min(resolve_threads(threads), std::max<std::size_t>(1, count));
    if (workers == 1)
    {
        work();
    }
    else
    {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back(work);
        for (auto& t : pool)
            t.join();
    }
    if (error)
        std::rethrow_exception(error);
    return out;
}

} // namespace psiflow::harness
