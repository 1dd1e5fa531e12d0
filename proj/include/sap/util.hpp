#ifndef SAP_UTIL_HPP
#define SAP_UTIL_HPP

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace sap {

/// FNV-1a over raw bytes; used for cache content hashes and RNG sub-streams.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ull) {
    return fnv1a(s.data(), s.size(), h);
}

/// Named sub-stream RNG: all entropy flows from one root seed, so any
/// component can derive an independent, reproducible stream by name.
inline std::mt19937_64 make_stream(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t h = fnv1a(name);
    h = fnv1a(&root_seed, sizeof(root_seed), h);
    h = fnv1a(&index, sizeof(index), h);
    return std::mt19937_64(h);
}

/// Runs fn(i) for i in [0, n) across a small thread pool.
/// Falls back to a serial loop when the pool would have a single worker.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, unsigned jobs = 0) {
    if (jobs == 0) jobs = std::thread::hardware_concurrency();
    if (jobs <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (jobs > n) jobs = static_cast<unsigned>(n);
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (unsigned w = 0; w < jobs; ++w) {
        pool.emplace_back([=, &fn] {
            for (std::size_t i = w; i < n; i += jobs) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sap

#endif
