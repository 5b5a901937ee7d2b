#pragma once

#include <cmath>
#include <memory>

#include "cbsn/conv_kernels.hpp"
#include "cbsn/tape.hpp"

namespace cbsn {

/// 2-d convolution with zero padding dil*(k-1)/2 so the spatial size is
/// preserved. `mask` (k x k), when given, multiplies the kernel elementwise;
/// masked-out kernel entries receive zero gradient.
template <typename T>
Var conv2d(Tape<T>& t, Var input, Var kernel, Var bias, std::int64_t dilation, const Tensor<T>* mask = nullptr) {
    const Tensor<T>& x = t.value(input);
    const Tensor<T>& w = t.value(kernel);
    const Tensor<T>& b = t.value(bias);
    if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be [B,Cin,H,W], got " + shape_str(x.shape));
    if (w.rank() != 4) throw std::invalid_argument("conv2d: kernel must be [Cout,Cin,k,k], got " + shape_str(w.shape));
    const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t Cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != Cin)
        throw std::invalid_argument("conv2d: kernel expects " + std::to_string(w.dim(1)) +
                                    " input channels, input has " + std::to_string(Cin));
    if (w.dim(3) != k) throw std::invalid_argument("conv2d: kernel must be square, got " + shape_str(w.shape));
    if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd, got " + std::to_string(k));
    if (dilation < 1) throw std::invalid_argument("conv2d: dilation must be positive");
    if (b.shape != Shape{Cout}) throw std::invalid_argument("conv2d: bias must be [Cout], got " + shape_str(b.shape));
    if (mask && mask->shape != Shape{k, k})
        throw std::invalid_argument("conv2d: mask must be [k,k], got " + shape_str(mask->shape));

    Tensor<T> y({N, Cout, H, W});
    // Mask is saved by value; callers may pass temporaries.
    auto saved_mask = mask ? std::make_shared<const Tensor<T>>(*mask) : nullptr;
    const T* mp = saved_mask ? saved_mask->ptr() : nullptr;
    detail::conv2d_forward(x.ptr(), y.ptr(), w.ptr(), b.ptr(), mp, N, Cin, H, W, Cout, k, dilation);

    const bool needs = t.needs_grad(input) || t.needs_grad(kernel) || t.needs_grad(bias);
    return t.record(std::move(y), needs, [=](Tape<T>& tp, Var out) {
        const Tensor<T>& gy = tp.grad(out);
        const T* mq = saved_mask ? saved_mask->ptr() : nullptr;
        if (tp.needs_grad(input))
            detail::conv2d_backward_input(tp.grad(input).ptr(), gy.ptr(), tp.value(kernel).ptr(), mq, N, Cin, H, W,
                                          Cout, k, dilation);
        if (tp.needs_grad(kernel))
            detail::conv2d_backward_kernel(tp.grad(kernel).ptr(), gy.ptr(), tp.value(input).ptr(), mq, N, Cin, H, W,
                                           Cout, k, dilation);
        if (tp.needs_grad(bias)) detail::conv2d_backward_bias(tp.grad(bias).ptr(), gy.ptr(), N, Cout, H * W);
    });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T> y(xv.shape);
    for (std::int64_t i = 0; i < xv.numel(); ++i) y.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
    return t.record(std::move(y), t.needs_grad(x), [x](Tape<T>& tp, Var out) {
        if (!tp.needs_grad(x)) return;
        const Tensor<T>& gy = tp.grad(out);
        const Tensor<T>& xv2 = tp.value(x);
        Tensor<T>& gx = tp.grad(x);
        for (std::int64_t i = 0; i < xv2.numel(); ++i)
            if (xv2.data[i] > T(0)) gx.data[i] += gy.data[i];
    });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    require_same_shape(av, bv, "add");
    Tensor<T> y(av.shape);
    for (std::int64_t i = 0; i < av.numel(); ++i) y.data[i] = av.data[i] + bv.data[i];
    return t.record(std::move(y), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape<T>& tp, Var out) {
        const Tensor<T>& gy = tp.grad(out);
        if (tp.needs_grad(a)) {
            Tensor<T>& ga = tp.grad(a);
            for (std::int64_t i = 0; i < gy.numel(); ++i) ga.data[i] += gy.data[i];
        }
        if (tp.needs_grad(b)) {
            Tensor<T>& gb = tp.grad(b);
            for (std::int64_t i = 0; i < gy.numel(); ++i) gb.data[i] += gy.data[i];
        }
    });
}

/// Concatenate along the channel axis; batch and spatial dims must agree.
template <typename T>
Var concat_channels(Tape<T>& t, Var a, Var b) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    if (av.rank() != 4 || bv.rank() != 4) throw std::invalid_argument("concat_channels: inputs must be [B,C,H,W]");
    if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
        throw std::invalid_argument("concat_channels: B,H,W must match, got " + shape_str(av.shape) + " vs " +
                                    shape_str(bv.shape));
    const std::int64_t N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), HW = av.dim(2) * av.dim(3);
    Tensor<T> y({N, Ca + Cb, av.dim(2), av.dim(3)});
    for (std::int64_t n = 0; n < N; ++n) {
        std::memcpy(y.ptr() + n * (Ca + Cb) * HW, av.ptr() + n * Ca * HW, sizeof(T) * static_cast<std::size_t>(Ca * HW));
        std::memcpy(y.ptr() + (n * (Ca + Cb) + Ca) * HW, bv.ptr() + n * Cb * HW,
                    sizeof(T) * static_cast<std::size_t>(Cb * HW));
    }
    return t.record(std::move(y), t.needs_grad(a) || t.needs_grad(b), [a, b, N, Ca, Cb, HW](Tape<T>& tp, Var out) {
        const Tensor<T>& gy = tp.grad(out);
        if (tp.needs_grad(a)) {
            Tensor<T>& ga = tp.grad(a);
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t i = 0; i < Ca * HW; ++i) ga.data[n * Ca * HW + i] += gy.data[n * (Ca + Cb) * HW + i];
        }
        if (tp.needs_grad(b)) {
            Tensor<T>& gb = tp.grad(b);
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t i = 0; i < Cb * HW; ++i)
                    gb.data[n * Cb * HW + i] += gy.data[(n * (Ca + Cb) + Ca) * HW + i];
        }
    });
}

template <typename T>
Var scale(Tape<T>& t, Var x, T s) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T> y(xv.shape);
    for (std::int64_t i = 0; i < xv.numel(); ++i) y.data[i] = s * xv.data[i];
    return t.record(std::move(y), t.needs_grad(x), [x, s](Tape<T>& tp, Var out) {
        if (!tp.needs_grad(x)) return;
        const Tensor<T>& gy = tp.grad(out);
        Tensor<T>& gx = tp.grad(x);
        for (std::int64_t i = 0; i < gy.numel(); ++i) gx.data[i] += s * gy.data[i];
    });
}

/// Pixel-averaged L1 distance, (1/n) sum |a-b|, as a scalar tensor.
template <typename T>
Var mean_abs(Tape<T>& t, Var a, Var b) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    require_same_shape(av, bv, "mean_abs");
    const std::int64_t n = av.numel();
    if (n == 0) throw std::invalid_argument("mean_abs: empty tensors");
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(av.data[i]) - static_cast<double>(bv.data[i]));
    Tensor<T> y({1});
    y.data[0] = static_cast<T>(acc / static_cast<double>(n));
    return t.record(std::move(y), t.needs_grad(a) || t.needs_grad(b), [a, b, n](Tape<T>& tp, Var out) {
        const T g = tp.grad(out).data[0] / static_cast<T>(n);
        const Tensor<T>& av2 = tp.value(a);
        const Tensor<T>& bv2 = tp.value(b);
        // subgradient 0 at ties
        if (tp.needs_grad(a)) {
            Tensor<T>& ga = tp.grad(a);
            for (std::int64_t i = 0; i < n; ++i) {
                const T d = av2.data[i] - bv2.data[i];
                ga.data[i] += d > T(0) ? g : (d < T(0) ? -g : T(0));
            }
        }
        if (tp.needs_grad(b)) {
            Tensor<T>& gb = tp.grad(b);
            for (std::int64_t i = 0; i < n; ++i) {
                const T d = av2.data[i] - bv2.data[i];
                gb.data[i] += d > T(0) ? -g : (d < T(0) ? g : T(0));
            }
        }
    });
}

/// Mean squared distance, (1/n) sum (a-b)^2, as a scalar tensor.
template <typename T>
Var mean_sq(Tape<T>& t, Var a, Var b) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    require_same_shape(av, bv, "mean_sq");
    const std::int64_t n = av.numel();
    if (n == 0) throw std::invalid_argument("mean_sq: empty tensors");
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(av.data[i]) - static_cast<double>(bv.data[i]);
        acc += d * d;
    }
    Tensor<T> y({1});
    y.data[0] = static_cast<T>(acc / static_cast<double>(n));
    return t.record(std::move(y), t.needs_grad(a) || t.needs_grad(b), [a, b, n](Tape<T>& tp, Var out) {
        const T g = tp.grad(out).data[0] * T(2) / static_cast<T>(n);
        const Tensor<T>& av2 = tp.value(a);
        const Tensor<T>& bv2 = tp.value(b);
        if (tp.needs_grad(a)) {
            Tensor<T>& ga = tp.grad(a);
            for (std::int64_t i = 0; i < n; ++i) ga.data[i] += g * (av2.data[i] - bv2.data[i]);
        }
        if (tp.needs_grad(b)) {
            Tensor<T>& gb = tp.grad(b);
            for (std::int64_t i = 0; i < n; ++i) gb.data[i] -= g * (av2.data[i] - bv2.data[i]);
        }
    });
}

/// Forward identity; contributes zero gradient to everything upstream.
template <typename T>
Var stop_gradient(Tape<T>& t, Var x) {
    Tensor<T> y = t.value(x);
    return t.leaf(std::move(y), false);
}

}  // namespace cbsn
