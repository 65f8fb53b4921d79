#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mnat {

using Vec = std::vector<double>;

/// Malformed caller input (dimension mismatch, invalid measure, bad flag value).
struct input_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Request outside the supported envelope (e.g. grid quadrature in high dimension).
struct unsupported_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw input_error(what);
}

inline void require_same_dim(std::size_t a, std::size_t b, const char* where) {
    if (a != b)
        throw input_error(std::string(where) + ": dimension mismatch (" + std::to_string(a) +
                          " vs " + std::to_string(b) + ")");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm1(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += std::abs(v);
    return s;
}

inline double norm_inf(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s = std::max(s, std::abs(v));
    return s;
}

inline bool all_finite(std::span<const double> a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    for (std::size_t k = 0; k < x.size(); ++k) y[k] += a * x[k];
}

}  // namespace detail
}  // namespace mnat
