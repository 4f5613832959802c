#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "eeunet/error.hpp"

namespace eeunet {

// Rank-4 dense tensor with (batch, channel, height, width) axes, row-major
// with width fastest. This is the unit of all differentiable computation.
template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<size_t>(n_) * c_ * h_ * w_, fill) {}

    size_t size() const { return data.size(); }

    T& at(int in, int ic, int ih, int iw) {
        return data[((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw];
    }
    T at(int in, int ic, int ih, int iw) const {
        return data[((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw];
    }

    // Pointer to the start of one (n, c) plane.
    T* plane(int in, int ic) { return data.data() + (static_cast<size_t>(in) * c + ic) * h * w; }
    const T* plane(int in, int ic) const {
        return data.data() + (static_cast<size_t>(in) * c + ic) * h * w;
    }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

// Plain 2D grid, row-major. Images, masks, and edge maps live here.
template <typename T>
struct Grid2D {
    int rows = 0, cols = 0;
    std::vector<T> data;

    Grid2D() = default;
    Grid2D(int r, int c, T fill = T(0)) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

    T& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    T at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }
    bool same_shape(const Grid2D& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Grid2D& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

// Percentile by nearest rank on the (n-1)-scaled index: sorted[round(q*(n-1))].
// Both the slice normalizer and the hysteresis thresholds use this exact
// convention, and the test oracles transcribe it; do not change it silently.
template <typename T>
inline double percentile(std::vector<T> values, double q) {
    if (values.empty()) throw DataError("percentile of empty set");
    std::sort(values.begin(), values.end());
    double pos = q * static_cast<double>(values.size() - 1);
    size_t idx = static_cast<size_t>(std::llround(pos));
    if (idx >= values.size()) idx = values.size() - 1;
    return static_cast<double>(values[idx]);
}

template <typename T>
inline bool all_finite(const std::vector<T>& v) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

template <typename T>
inline void check_finite(const Tensor4<T>& t, const char* where) {
#ifdef EEUNET_CHECK_FINITE
    if (!all_finite(t.data)) throw NonFiniteActivation(std::string("non-finite value after ") + where);
#else
    (void)t;
    (void)where;
#endif
}

// Worker cap shared by every parallel loop: EEUNET_THREADS wins, else the
// hardware count. Loops below only ever hand each index to one worker, so
// results do not depend on the thread count. The env var is re-read on each
// call so a process can pin single-threaded sections.
inline int max_threads() {
    if (const char* env = std::getenv("EEUNET_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    static int hw = [] {
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return hw;
}

// Static block partition of [0, count). fn(i) must write only state owned
// by index i; under that contract the result is identical for any thread
// count, so seeded runs stay reproducible.
inline void parallel_for(int64_t count, const std::function<void(int64_t)>& fn) {
    int nthreads = std::min<int64_t>(max_threads(), count);
    if (nthreads <= 1 || count < 4) {
        for (int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(nthreads);
    int64_t chunk = (count + nthreads - 1) / nthreads;
    for (int t = 0; t < nthreads; ++t) {
        int64_t lo = t * chunk;
        int64_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([lo, hi, &fn] {
            for (int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : workers) th.join();
}

}  // namespace eeunet
