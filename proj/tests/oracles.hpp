#pragma once

// Test-only oracles. Everything here recomputes expectations by an
// independent route (finite differences, closed forms, Monte-Carlo) and must
// not call into the autodiff path it is used to check.

#include <cmath>
#include <cstddef>
#include <vector>

#include "bitraj/rng.hpp"
#include "bitraj/tensor.hpp"

namespace oracles {

inline double rel_err(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-12});
    return std::fabs(a - b) / denom;
}

inline double rel_err(const bitraj::Tensor& a, const bitraj::Tensor& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        diff += (da[i] - db[i]) * (da[i] - db[i]);
        na += da[i] * da[i];
        nb += db[i] * db[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
    return std::sqrt(diff) / denom;
}

// Central finite differences of a scalar function w.r.t. every entry of
// inputs[which].
template <typename F>
bitraj::Tensor fd_gradient(F f, std::vector<bitraj::Tensor> inputs, std::size_t which,
                           double step = 1e-5) {
    bitraj::Tensor g(inputs[which].rows(), inputs[which].cols());
    auto entries = inputs[which].data();
    auto gout = g.data();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const double x0 = entries[i];
        entries[i] = x0 + step;
        const double fp = f(inputs);
        entries[i] = x0 - step;
        const double fm = f(inputs);
        entries[i] = x0;
        gout[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

// Least-squares linear map fit, Theta = argmin ||X Theta - Y||_F^2, via the
// normal equations with a tiny ridge so the rank-deficient noise-free case
// stays solvable. Predictions on the training span are exact up to O(ridge).
inline bitraj::Tensor lsq_fit(const bitraj::Tensor& x, const bitraj::Tensor& y,
                              double ridge = 1e-10) {
    using bitraj::Tensor;
    const std::size_t d = x.cols(), e = y.cols();
    Tensor xtx = bitraj::kern::matmul(bitraj::kern::transpose(x), x);
    for (std::size_t i = 0; i < d; ++i) xtx(i, i) += ridge;
    Tensor xty = bitraj::kern::matmul(bitraj::kern::transpose(x), y);

    // Gaussian elimination with partial pivoting on [xtx | xty]
    Tensor a = xtx;
    Tensor b = xty;
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::fabs(a(r, col)) > std::fabs(a(piv, col))) piv = r;
        if (piv != col) {
            for (std::size_t j = 0; j < d; ++j) std::swap(a(col, j), a(piv, j));
            for (std::size_t j = 0; j < e; ++j) std::swap(b(col, j), b(piv, j));
        }
        const double p = a(col, col);
        for (std::size_t r = col + 1; r < d; ++r) {
            const double m = a(r, col) / p;
            if (m == 0.0) continue;
            for (std::size_t j = col; j < d; ++j) a(r, j) -= m * a(col, j);
            for (std::size_t j = 0; j < e; ++j) b(r, j) -= m * b(col, j);
        }
    }
    Tensor theta(d, e);
    for (std::size_t r = d; r-- > 0;) {
        for (std::size_t j = 0; j < e; ++j) {
            double s = b(r, j);
            for (std::size_t c = r + 1; c < d; ++c) s -= a(r, c) * theta(c, j);
            theta(r, j) = s / a(r, r);
        }
    }
    return theta;
}

// Monte-Carlo estimate of random-ranking recall@k: each trial draws iid
// uniform scores for the candidate pool and checks whether the best of the
// query's correct candidates lands in the top k.
struct McEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
};

inline McEstimate mc_random_recall(std::size_t n, std::size_t captions_per_item, std::size_t k,
                                   bool image_to_text, std::size_t trials, std::uint64_t seed) {
    bitraj::Rng rng(seed);
    const std::size_t pool = image_to_text ? n * captions_per_item : n;
    const std::size_t correct = image_to_text ? captions_per_item : 1;
    std::size_t hits = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        double best_correct = 0.0;
        for (std::size_t j = 0; j < correct; ++j)
            best_correct = std::max(best_correct, rng.uniform());
        std::size_t above = 0;
        for (std::size_t j = correct; j < pool; ++j)
            if (rng.uniform() > best_correct) ++above;
        if (above + 1 <= k) ++hits;
    }
    const double p = static_cast<double>(hits) / static_cast<double>(trials);
    return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(trials))};
}

// Image-to-text R@1 of the linear retriever: predict a caption embedding per
// test image and rank true captions by euclidean distance (K = 1 data).
inline double lsq_retrieval_r1(const bitraj::Tensor& theta, const bitraj::Tensor& test_images,
                               const bitraj::Tensor& test_captions) {
    const std::size_t n = test_images.rows();
    std::size_t hits = 0;
    bitraj::Tensor pred = bitraj::kern::matmul(test_images, theta);
    for (std::size_t i = 0; i < n; ++i) {
        double best = 0.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < pred.cols(); ++c) {
                const double diff = pred(i, c) - test_captions(j, c);
                d2 += diff * diff;
            }
            if (j == 0 || d2 < best) {
                best = d2;
                best_j = j;
            }
        }
        if (best_j == i) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

} // namespace oracles
