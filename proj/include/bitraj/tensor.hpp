#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bitraj/common.hpp"

namespace bitraj {

// Dense 2-D double matrix, row-major. Plain value type; autodiff lives in
// graph.hpp on top of these kernels.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), v_(rows * cols, 0.0) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), v_(std::move(data)) {
        if (v_.size() != rows_ * cols_)
            throw NumericError("tensor: data length " + std::to_string(v_.size()) +
                               " does not match shape " + shape_str());
    }

    static Tensor full(std::size_t rows, std::size_t cols, double value) {
        Tensor t(rows, cols);
        for (auto& x : t.v_) x = value;
        return t;
    }
    static Tensor identity(std::size_t n) {
        Tensor t(n, n);
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return v_.size(); }
    bool empty() const noexcept { return v_.empty(); }

    double operator()(std::size_t i, std::size_t j) const { return v_[i * cols_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return v_[i * cols_ + j]; }

    std::span<const double> data() const noexcept { return v_; }
    std::span<double> data() noexcept { return v_; }

    bool same_shape(const Tensor& o) const noexcept {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }
    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool all_finite() const noexcept {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> v_;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i)
        if (da[i] != db[i]) return false;
    return true;
}

namespace kern {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw NumericError(std::string(op) + ": shape mismatch " + a.shape_str() +
                           " vs " + b.shape_str());
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw NumericError("matmul: inner dimensions disagree, " + a.shape_str() +
                           " x " + b.shape_str());
    Tensor c(a.rows(), b.cols());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = c.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            const double* Bp = B + p * n;
            double* Ci = C + i * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
        }
    }
    return c;
}

inline Tensor transpose(const Tensor& a) {
    Tensor t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

template <typename F>
inline Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
    require_same_shape(a, b, op);
    Tensor c(a.rows(), a.cols());
    auto da = a.data(), db = b.data();
    auto dc = c.data();
    for (std::size_t i = 0; i < dc.size(); ++i) dc[i] = f(da[i], db[i]);
    return c;
}

template <typename F>
inline Tensor map(const Tensor& a, F f) {
    Tensor c(a.rows(), a.cols());
    auto da = a.data();
    auto dc = c.data();
    for (std::size_t i = 0; i < dc.size(); ++i) dc[i] = f(da[i]);
    return c;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    return zip(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    return zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
    return zip(a, b, "div", [](double x, double y) { return x / y; });
}
inline Tensor scale(const Tensor& a, double c) {
    return map(a, [c](double x) { return x * c; });
}

inline double sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    return s;
}

inline double frobenius_sq(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x * x;
    return s;
}

inline Tensor row_sum(const Tensor& a) {
    Tensor r(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
        r(i, 0) = s;
    }
    return r;
}

inline Tensor take_rows(const Tensor& a, std::span<const std::int32_t> rows) {
    Tensor r(rows.size(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = static_cast<std::size_t>(rows[i]);
        for (std::size_t j = 0; j < a.cols(); ++j) r(i, j) = a(src, j);
    }
    return r;
}

} // namespace kern
} // namespace bitraj
