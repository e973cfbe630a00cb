#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace mf {

using Vec = std::vector<float>;

// Dense row-major float32 matrix. y = W x convention: rows are outputs.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}

    float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    Vec column(std::size_t c) const {
        Vec out(rows);
        for (std::size_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
        return out;
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool operator==(const Matrix& o) const = default;
};

inline float dot(std::span<const float> a, std::span<const float> b) {
    float s = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double dot_d(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

inline double norm_d(std::span<const float> a) { return std::sqrt(dot_d(a, a)); }

// y = W x
inline Vec matvec(const Matrix& w, std::span<const float> x) {
    if (x.size() != w.cols) throw std::invalid_argument("matvec: dimension mismatch");
    Vec y(w.rows);
    for (std::size_t r = 0; r < w.rows; ++r) y[r] = dot(w.row(r), x);
    return y;
}

inline bool all_finite(std::span<const float> v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace mf
