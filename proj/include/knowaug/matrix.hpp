#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "knowaug/errors.hpp"
#include "knowaug/rng.hpp"

namespace knowaug {

// Dense row-major matrix of doubles. Column vectors are n x 1, rows 1 x n.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows = init.size();
        cols = rows == 0 ? 0 : init.begin()->size();
        data.reserve(rows * cols);
        for (const auto& row : init) {
            if (row.size() != cols)
                throw shape_error("matrix literal: ragged rows");
            data.insert(data.end(), row.begin(), row.end());
        }
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c, 0.0); }

    static Matrix constant(std::size_t r, std::size_t c, double v) { return Matrix(r, c, v); }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n, 0.0);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix uniform(std::size_t r, std::size_t c, double lo, double hi, Rng& rng) {
        Matrix m(r, c);
        for (double& v : m.data) v = rng.next_uniform(lo, hi);
        return m;
    }
};

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw shape_error("matmul: lhs " + shape_str(a) + " rhs " + shape_str(b));
    Matrix c(a.rows, b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = &a.data[i * a.cols];
        double* crow = &c.data[i * b.cols];
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = &b.data[k * b.cols];
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw shape_error("add: lhs " + shape_str(a) + " rhs " + shape_str(b));
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
    return c;
}

inline bool approx_equal(const Matrix& a, const Matrix& b, double tol) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::abs(a.data[i] - b.data[i]) > tol) return false;
    return true;
}

} // namespace knowaug
