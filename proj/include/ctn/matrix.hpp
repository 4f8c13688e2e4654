#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctn {

struct dim_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Row-major dense matrix of doubles. Time-major when used as a feature map:
// row = time step, column = channel.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0)
        : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

    double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return a.size(); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Mat& m) { return all_finite(std::span<const double>(m.a)); }

inline void require_finite(std::span<const double> v, const std::string& what) {
    if (!all_finite(v)) throw numeric_error("non-finite values in " + what);
}

inline void require_finite(const Mat& m, const std::string& what) {
    require_finite(std::span<const double>(m.a), what);
}

// FNV-1a over raw bytes; used for determinism checks and report provenance.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t hash_doubles(std::span<const double> v, uint64_t h = 14695981039346656037ull) {
    return fnv1a64(v.data(), v.size() * sizeof(double), h);
}

// Round a double through IEEE float, the storage precision of checkpoints.
inline double quantize_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline void quantize_f32(std::span<double> v) {
    for (double& x : v) x = quantize_f32(x);
}

}  // namespace ctn
