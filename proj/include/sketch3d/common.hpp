#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sketch3d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

// Error hierarchy. Every error raised by the library derives from Error so
// callers (the CLI in particular) can map families onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Precondition violated by an argument (t outside [0,1], empty list, ...).
struct DomainError : Error {
    using Error::Error;
};

struct ProjectionError : Error {
    ProjectionError(const std::string &what, double depth_)
        : Error(what), depth(depth_) {}
    double depth;
};

struct DegenerateNormalError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// NaN/Inf encountered during optimization.
struct NumericalAbort : Error {
    NumericalAbort(const std::string &what, long step_)
        : Error(what), step(step_) {}
    long step;
};

namespace parallel {

inline std::atomic<int> &thread_count_setting() {
    static std::atomic<int> count{0};
    return count;
}

/// Number of worker threads used by parallel_for. 0 selects
/// std::thread::hardware_concurrency().
inline void set_thread_count(int n) { thread_count_setting() = std::max(0, n); }

inline int thread_count() {
    int n = thread_count_setting();
    if (n <= 0) {
        n = static_cast<int>(std::thread::hardware_concurrency());
    }
    return std::max(1, n);
}

/// Runs body(i) for i in [0, n). Work items are claimed dynamically, so
/// callers that reduce must write into per-item slots and combine them in
/// index order afterwards; results then do not depend on the thread count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body) {
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (;;) {
            const auto i = next.fetch_add(1);
            if (i >= n || failed) return;
            try {
                body(i);
            } catch (...) {
                if (!failed.exchange(true)) failure = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

} // namespace parallel

} // namespace sketch3d
