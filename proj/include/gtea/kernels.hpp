#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gtea/tensor.hpp"

namespace gtea::numerics {

/// Numerically stable softmax of a vector (max-subtraction). Output entries
/// are strictly positive and sum to 1.
template <typename T>
Tensor<T> softmax(const Tensor<T>& z) {
    if (z.rank() != 1 || z.size() == 0) {
        throw ShapeError("softmax: expected non-empty vector, got " + z.shape_string());
    }
    const std::size_t n = z.size();
    T zmax = z[0];
    for (std::size_t i = 1; i < n; ++i) zmax = std::max(zmax, z[i]);
    std::vector<T> out(n);
    T denom = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(z[i] - zmax);
        denom += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= denom;
    Tensor<T> p = Tensor<T>::vector(std::move(out));
    if (!p.all_finite()) throw NumericError("softmax produced a non-finite value");
    return p;
}

/// Sparsemax: Euclidean projection of z onto the probability simplex.
///   1. sort z descending (stable, so exact ties keep their input order)
///   2. k(z) = max{ k : 1 + k*z_(k) >= sum_{j<=k} z_(j) }
///   3. tau  = (sum_{j<=k(z)} z_(j) - 1) / k(z)
///   4. p_i  = max(z_i - tau, 0)
/// Entries below the threshold come out exactly zero.
template <typename T>
Tensor<T> sparsemax(const Tensor<T>& z) {
    if (z.rank() != 1 || z.size() == 0) {
        throw ShapeError("sparsemax: expected non-empty vector, got " + z.shape_string());
    }
    const std::size_t n = z.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });

    T cumulative = T(0);
    T support_sum = T(0);
    std::size_t support = 0;
    for (std::size_t k = 1; k <= n; ++k) {
        const T zk = z[order[k - 1]];
        cumulative += zk;
        if (T(1) + T(k) * zk >= cumulative) {
            support = k;
            support_sum = cumulative;
        }
    }
    const T tau = (support_sum - T(1)) / T(support);
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T v = z[i] - tau;
        out[i] = v > T(0) ? v : T(0);
    }
    Tensor<T> p = Tensor<T>::vector(std::move(out));
    if (!p.all_finite()) throw NumericError("sparsemax produced a non-finite value");
    return p;
}

/// Threshold tau(z) of the sparsemax transformation, exposed for tests.
template <typename T>
T sparsemax_tau(const Tensor<T>& z) {
    Tensor<T> p = sparsemax(z);
    // recover tau from any supported coordinate
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (p[i] > T(0)) return z[i] - p[i];
    }
    return T(0);  // unreachable: support is never empty
}

/// Backward rule for sparsemax. With s the indicator of the support
/// S = { i : p_i > 0 }, the Jacobian is J = diag(s) - s s^T / |S|, so
/// grad_i = s_i * (g_i - mean_{j in S} g_j). Coordinates outside the
/// support get exactly zero gradient.
template <typename T>
Tensor<T> sparsemax_backward(const Tensor<T>& p, const Tensor<T>& upstream) {
    if (p.rank() != 1 || upstream.rank() != 1 || !p.same_shape(upstream)) {
        throw ShapeError("sparsemax_backward: shapes " + p.shape_string() + " vs " +
                         upstream.shape_string());
    }
    const std::size_t n = p.size();
    T support_grad = T(0);
    std::size_t support = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (p[i] > T(0)) {
            support_grad += upstream[i];
            ++support;
        }
    }
    const T mean_grad = support > 0 ? support_grad / T(support) : T(0);
    std::vector<T> out(n, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        if (p[i] > T(0)) out[i] = upstream[i] - mean_grad;
    }
    return Tensor<T>::vector(std::move(out));
}

/// Jacobian-vector rule for softmax: grad = y .* (g - <g, y>).
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& upstream) {
    if (!y.same_shape(upstream)) {
        throw ShapeError("softmax_backward: shapes " + y.shape_string() + " vs " +
                         upstream.shape_string());
    }
    const std::size_t n = y.size();
    T inner = T(0);
    for (std::size_t i = 0; i < n; ++i) inner += upstream[i] * y[i];
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = y[i] * (upstream[i] - inner);
    return Tensor<T>::vector(std::move(out));
}

}  // namespace gtea::numerics
