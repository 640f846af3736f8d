#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "gdahin/errors.hpp"

namespace gda {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

enum class Domain { source, target };

inline const char* domain_name(Domain d) {
    return d == Domain::source ? "source" : "target";
}

/// Deterministic RNG used everywhere; draw order is fixed by construction order.
using Rng = std::mt19937_64;

inline std::string strfmt(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    va_list args2;
    va_copy(args2, args);
    int n = std::vsnprintf(nullptr, 0, fmt, args);
    va_end(args);
    std::string out(static_cast<size_t>(n), '\0');
    std::vsnprintf(out.data(), out.size() + 1, fmt, args2);
    va_end(args2);
    return out;
}

/// Round-trip-exact decimal rendering of a double.
inline std::string fmt_double(double v) {
    return strfmt("%.17g", v);
}

inline bool all_finite(const Mat& m) {
    return m.allFinite();
}

inline Mat glorot_uniform(Rng& rng, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Mat w(fan_in, fan_out);
    for (int i = 0; i < fan_in; ++i)
        for (int j = 0; j < fan_out; ++j) w(i, j) = dist(rng);
    return w;
}

inline Mat gaussian_matrix(Rng& rng, int rows, int cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

}  // namespace gda
