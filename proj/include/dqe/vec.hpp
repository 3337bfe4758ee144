#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dqe/error.hpp"

namespace dqe {

using Vec = std::vector<double>;
using CSpan = std::span<const double>;
using MSpan = std::span<double>;

inline double dot(CSpan a, CSpan b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(CSpan a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(CSpan a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool is_zero(CSpan a) {
    for (double x : a)
        if (x != 0.0) return false;
    return true;
}

/// y += alpha * x
inline void axpy(double alpha, CSpan x, MSpan y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// Row-major dense matrix, 64-bit.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    CSpan row(std::size_t r) const { return CSpan(data).subspan(r * cols, cols); }
    MSpan row(std::size_t r) { return MSpan(data).subspan(r * cols, cols); }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// out = M x
inline void matvec(const Matrix& m, CSpan x, MSpan out) {
    if (x.size() != m.cols || out.size() != m.rows)
        throw Error(Errc::DimMismatch, "matvec shape mismatch");
    for (std::size_t r = 0; r < m.rows; ++r) out[r] = dot(m.row(r), x);
}

/// M += alpha * u v^T
inline void add_outer(double alpha, CSpan u, CSpan v, Matrix& m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double ur = alpha * u[r];
        if (ur == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) row[c] += ur * v[c];
    }
}

}  // namespace dqe
