#pragma once

// Dense kernels shared by the encoder, the pre-training heads and the
// fine-tuning heads. Row-major throughout; a linear layer stores its weight
// as [in x out] so that y = x W + b.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace langadapt::nn {

/// y[n x out] = x[n x in] W[in x out] + b
template <typename T>
void linear_forward(std::span<const T> x, std::span<const T> w, std::span<const T> b, std::size_t n,
                    std::size_t in, std::size_t out, std::span<T> y) {
    for (std::size_t i = 0; i < n; ++i) {
        T* yi = y.data() + i * out;
        std::copy(b.begin(), b.end(), yi);
        const T* xi = x.data() + i * in;
        for (std::size_t k = 0; k < in; ++k) {
            const T xv = xi[k];
            const T* wk = w.data() + k * out;
            for (std::size_t j = 0; j < out; ++j) {
                yi[j] += xv * wk[j];
            }
        }
    }
}

/// Accumulates dW += x^T dy, db += sum(dy) and, when dx is non-empty, dx += dy W^T.
template <typename T>
void linear_backward(std::span<const T> x, std::span<const T> w, std::span<const T> dy, std::size_t n,
                     std::size_t in, std::size_t out, std::span<T> dw, std::span<T> db, std::span<T> dx) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* dyi = dy.data() + i * out;
        const T* xi = x.data() + i * in;
        for (std::size_t j = 0; j < out; ++j) {
            db[j] += dyi[j];
        }
        for (std::size_t k = 0; k < in; ++k) {
            const T xv = xi[k];
            T* dwk = dw.data() + k * out;
            const T* wk = w.data() + k * out;
            T acc = 0;
            for (std::size_t j = 0; j < out; ++j) {
                dwk[j] += xv * dyi[j];
                acc += dyi[j] * wk[j];
            }
            if (!dx.empty()) {
                dx[i * in + k] += acc;
            }
        }
    }
}

/// y = xhat * gain + bias per row; stores xhat and 1/sigma for the backward pass.
template <typename T>
void layer_norm_forward(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, std::size_t n,
                        std::size_t h, T eps, std::span<T> y, std::span<T> xhat, std::span<T> rstd) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.data() + i * h;
        T mean = 0;
        for (std::size_t k = 0; k < h; ++k) mean += xi[k];
        mean /= static_cast<T>(h);
        T var = 0;
        for (std::size_t k = 0; k < h; ++k) var += (xi[k] - mean) * (xi[k] - mean);
        var /= static_cast<T>(h);
        const T r = T(1) / std::sqrt(var + eps);
        rstd[i] = r;
        for (std::size_t k = 0; k < h; ++k) {
            const T xh = (xi[k] - mean) * r;
            xhat[i * h + k] = xh;
            y[i * h + k] = xh * gain[k] + bias[k];
        }
    }
}

/// Accumulates dgain, dbias and dx.
template <typename T>
void layer_norm_backward(std::span<const T> dy, std::span<const T> xhat, std::span<const T> rstd,
                         std::span<const T> gain, std::size_t n, std::size_t h, std::span<T> dgain,
                         std::span<T> dbias, std::span<T> dx) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* dyi = dy.data() + i * h;
        const T* xh = xhat.data() + i * h;
        T mean_dxh = 0;
        T mean_dxh_xh = 0;
        for (std::size_t k = 0; k < h; ++k) {
            const T dxh = dyi[k] * gain[k];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[k];
            dgain[k] += dyi[k] * xh[k];
            dbias[k] += dyi[k];
        }
        mean_dxh /= static_cast<T>(h);
        mean_dxh_xh /= static_cast<T>(h);
        for (std::size_t k = 0; k < h; ++k) {
            const T dxh = dyi[k] * gain[k];
            dx[i * h + k] += rstd[i] * (dxh - mean_dxh - xh[k] * mean_dxh_xh);
        }
    }
}

/// Exact (erf) GELU.
template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
    return cdf + x * pdf;
}

/// Numerically stable log(sum(exp(v))).
template <typename T>
T log_sum_exp(std::span<const T> v) {
    T hi = v[0];
    for (T x : v) hi = std::max(hi, x);
    T s = 0;
    for (T x : v) s += std::exp(x - hi);
    return hi + std::log(s);
}

/// log(1 + exp(x)) without overflow.
template <typename T>
T softplus(T x) {
    return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

} // namespace langadapt::nn
