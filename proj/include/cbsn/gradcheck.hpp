#pragma once

#include "cbsn/tensor.hpp"

namespace cbsn {

/// Central-difference gradient of a scalar-valued function, one coordinate at
/// a time. Test oracle; deliberately knows nothing about the tape.
template <typename T, typename F>
Tensor<T> finite_diff_grad(F&& f, const Tensor<T>& x, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be > 0");
    Tensor<T> g(x.shape);
    Tensor<T> probe = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const T orig = probe.data[i];
        probe.data[i] = orig + static_cast<T>(eps);
        const double hi = static_cast<double>(f(probe));
        probe.data[i] = orig - static_cast<T>(eps);
        const double lo = static_cast<double>(f(probe));
        probe.data[i] = orig;
        g.data[i] = static_cast<T>((hi - lo) / (2.0 * eps));
    }
    return g;
}

/// Largest relative error between an analytic and a reference gradient,
/// max_i |a_i - r_i| / max(1, |r_i|).
template <typename T>
double max_rel_error(const Tensor<T>& analytic, const Tensor<T>& reference) {
    require_same_shape(analytic, reference, "max_rel_error");
    double worst = 0.0;
    for (std::int64_t i = 0; i < analytic.numel(); ++i) {
        const double a = static_cast<double>(analytic.data[i]);
        const double r = static_cast<double>(reference.data[i]);
        const double denom = std::max(1.0, std::abs(r));
        worst = std::max(worst, std::abs(a - r) / denom);
    }
    return worst;
}

}  // namespace cbsn
