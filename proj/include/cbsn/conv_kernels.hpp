#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cbsn/tensor.hpp"

namespace cbsn::detail {

// Flat dot product with four independent accumulator chains; the FMA latency
// chain is what bounds a single-accumulator reduction. Lane order is fixed,
// so results are deterministic for a given build.
template <typename T>
T flat_dot(const T* __restrict a, const T* __restrict b, std::int64_t n) {
#if defined(__GNUC__) && defined(__SSE2__)
    constexpr int V = 32 / static_cast<int>(sizeof(T));  // one YMM per chain
    typedef T Vec __attribute__((vector_size(32)));
    Vec acc0{}, acc1{}, acc2{}, acc3{};
    std::int64_t q = 0;
    for (; q + 4 * V <= n; q += 4 * V) {
        Vec a0, a1, a2, a3, b0, b1, b2, b3;
        std::memcpy(&a0, a + q, 32);
        std::memcpy(&a1, a + q + V, 32);
        std::memcpy(&a2, a + q + 2 * V, 32);
        std::memcpy(&a3, a + q + 3 * V, 32);
        std::memcpy(&b0, b + q, 32);
        std::memcpy(&b1, b + q + V, 32);
        std::memcpy(&b2, b + q + 2 * V, 32);
        std::memcpy(&b3, b + q + 3 * V, 32);
        acc0 += a0 * b0;
        acc1 += a1 * b1;
        acc2 += a2 * b2;
        acc3 += a3 * b3;
    }
    acc0 += acc1;
    acc2 += acc3;
    acc0 += acc2;
    T s = T(0);
    for (int l = 0; l < V; ++l) s += acc0[l];
    for (; q < n; ++q) s += a[q] * b[q];
    return s;
#else
    T s = T(0);
    for (std::int64_t q = 0; q < n; ++q) s += a[q] * b[q];
    return s;
#endif
}

// Direct NCHW convolution with zero padding, output spatial size == input.
//
// Planes are copied into zero-framed scratch buffers sized for the kernel
// reach, which turns every kernel tap into one flat strided pass over the
// plane instead of many short per-row loops. The frame holds exact zeros, so
// out-of-range taps contribute exactly 0 and border pixels never read the
// values of pixels outside their true window. Each output plane is
// accumulated by a single thread in a fixed (ci,u,v) order, so results are
// bitwise reproducible for any thread count.

template <typename T>
struct PadPlan {
    std::int64_t pad, Hp, Wp, plane;
    PadPlan(std::int64_t H, std::int64_t W, std::int64_t k, std::int64_t dil)
        : pad(dil * (k - 1) / 2), Hp(H + 2 * pad), Wp(W + 2 * pad), plane(Hp * Wp) {}
};

// Copy [C,H,W] planes of image n into a zero-framed [C,Hp,Wp] buffer.
template <typename T>
void pad_planes(T* dst, const T* src, std::int64_t C, std::int64_t H, std::int64_t W, const PadPlan<T>& p) {
    if (p.pad == 0) {
        std::memcpy(dst, src, sizeof(T) * static_cast<std::size_t>(C * H * W));
        return;
    }
    std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(C * p.plane));
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < H; ++i)
            std::memcpy(dst + c * p.plane + (i + p.pad) * p.Wp + p.pad, src + (c * H + i) * W,
                        sizeof(T) * static_cast<std::size_t>(W));
}

template <typename T>
void conv2d_forward(const T* x, T* y, const T* w, const T* b, const T* mask, std::int64_t N, std::int64_t Cin,
                    std::int64_t H, std::int64_t W, std::int64_t Cout, std::int64_t k, std::int64_t dil) {
    const std::int64_t HW = H * W;
    const std::int64_t c = (k - 1) / 2;
    const PadPlan<T> p(H, W, k, dil);

    std::vector<T> xpad(static_cast<std::size_t>(N * Cin * p.plane));
    for (std::int64_t n = 0; n < N; ++n) pad_planes(xpad.data() + n * Cin * p.plane, x + n * Cin * HW, Cin, H, W, p);

#pragma omp parallel
    {
        std::vector<T> acc(static_cast<std::size_t>(p.plane));
#pragma omp for schedule(static) collapse(2)
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t co = 0; co < Cout; ++co) {
                std::memset(acc.data(), 0, sizeof(T) * static_cast<std::size_t>(p.plane));
                for (std::int64_t ci = 0; ci < Cin; ++ci) {
                    const T* __restrict xp = xpad.data() + (n * Cin + ci) * p.plane;
                    const T* wk = w + (co * Cin + ci) * k * k;
                    for (std::int64_t u = 0; u < k; ++u) {
                        for (std::int64_t v = 0; v < k; ++v) {
                            T wv = wk[u * k + v];
                            if (mask) wv *= mask[u * k + v];
                            if (wv == T(0)) continue;
                            const std::int64_t off = dil * (u - c) * p.Wp + dil * (v - c);
                            // Flat pass; writes that land in the frame are
                            // discarded at extraction.
                            const std::int64_t p0 = std::max<std::int64_t>(0, -off);
                            const std::int64_t p1 = std::min(p.plane, p.plane - off);
                            T* __restrict ap = acc.data();
                            const T* __restrict xo = xp + off;
                            for (std::int64_t q = p0; q < p1; ++q) ap[q] += wv * xo[q];
                        }
                    }
                }
                T* __restrict yp = y + (n * Cout + co) * HW;
                const T bias = b ? b[co] : T(0);
                for (std::int64_t i = 0; i < H; ++i) {
                    const T* __restrict ar = acc.data() + (i + p.pad) * p.Wp + p.pad;
                    T* __restrict yr = yp + i * W;
                    for (std::int64_t j = 0; j < W; ++j) yr[j] = bias + ar[j];
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(T* dx, const T* gy, const T* w, const T* mask, std::int64_t N, std::int64_t Cin,
                           std::int64_t H, std::int64_t W, std::int64_t Cout, std::int64_t k, std::int64_t dil) {
    const std::int64_t HW = H * W;
    const std::int64_t c = (k - 1) / 2;
    const PadPlan<T> p(H, W, k, dil);

    std::vector<T> gpad(static_cast<std::size_t>(N * Cout * p.plane));
    for (std::int64_t n = 0; n < N; ++n) pad_planes(gpad.data() + n * Cout * p.plane, gy + n * Cout * HW, Cout, H, W, p);

#pragma omp parallel
    {
        std::vector<T> acc(static_cast<std::size_t>(p.plane));
#pragma omp for schedule(static) collapse(2)
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                std::memset(acc.data(), 0, sizeof(T) * static_cast<std::size_t>(p.plane));
                for (std::int64_t co = 0; co < Cout; ++co) {
                    const T* __restrict gp = gpad.data() + (n * Cout + co) * p.plane;
                    const T* wk = w + (co * Cin + ci) * k * k;
                    for (std::int64_t u = 0; u < k; ++u) {
                        for (std::int64_t v = 0; v < k; ++v) {
                            T wv = wk[u * k + v];
                            if (mask) wv *= mask[u * k + v];
                            if (wv == T(0)) continue;
                            // adjoint reads gy at the opposite offset
                            const std::int64_t off = -(dil * (u - c) * p.Wp + dil * (v - c));
                            const std::int64_t p0 = std::max<std::int64_t>(0, -off);
                            const std::int64_t p1 = std::min(p.plane, p.plane - off);
                            T* __restrict ap = acc.data();
                            const T* __restrict go = gp + off;
                            for (std::int64_t q = p0; q < p1; ++q) ap[q] += wv * go[q];
                        }
                    }
                }
                T* __restrict dxp = dx + (n * Cin + ci) * HW;
                for (std::int64_t i = 0; i < H; ++i) {
                    const T* __restrict ar = acc.data() + (i + p.pad) * p.Wp + p.pad;
                    T* __restrict dr = dxp + i * W;
                    for (std::int64_t j = 0; j < W; ++j) dr[j] += ar[j];
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_kernel(T* dw, const T* gy, const T* x, const T* mask, std::int64_t N, std::int64_t Cin,
                            std::int64_t H, std::int64_t W, std::int64_t Cout, std::int64_t k, std::int64_t dil) {
    const std::int64_t HW = H * W;
    const std::int64_t c = (k - 1) / 2;
    const PadPlan<T> p(H, W, k, dil);

    // gy goes into the frame with exact zeros, so a flat dot over whole
    // padded planes counts frame products as 0 and matches the zero-padding
    // semantics exactly.
    std::vector<T> xpad(static_cast<std::size_t>(N * Cin * p.plane));
    std::vector<T> gpad(static_cast<std::size_t>(N * Cout * p.plane));
    for (std::int64_t n = 0; n < N; ++n) {
        pad_planes(xpad.data() + n * Cin * p.plane, x + n * Cin * HW, Cin, H, W, p);
        pad_planes(gpad.data() + n * Cout * p.plane, gy + n * Cout * HW, Cout, H, W, p);
    }

#pragma omp parallel for schedule(static) collapse(2)
    for (std::int64_t co = 0; co < Cout; ++co) {
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
            T* dwk = dw + (co * Cin + ci) * k * k;
            for (std::int64_t u = 0; u < k; ++u) {
                for (std::int64_t v = 0; v < k; ++v) {
                    // Accumulates: a parameter can feed several ops on one
                    // tape. Masked-out entries are never touched, so their
                    // gradient stays exactly zero.
                    const T mv = mask ? mask[u * k + v] : T(1);
                    if (mv == T(0)) continue;
                    const std::int64_t off = dil * (u - c) * p.Wp + dil * (v - c);
                    const std::int64_t p0 = std::max<std::int64_t>(0, -off);
                    const std::int64_t p1 = std::min(p.plane, p.plane - off);
                    T acc = T(0);
                    for (std::int64_t n = 0; n < N; ++n) {
                        const T* gp = gpad.data() + (n * Cout + co) * p.plane;
                        const T* xo = xpad.data() + (n * Cin + ci) * p.plane + off;
                        acc += flat_dot(gp + p0, xo + p0, p1 - p0);
                    }
                    dwk[u * k + v] += acc * mv;
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_bias(T* db, const T* gy, std::int64_t N, std::int64_t Cout, std::int64_t HW) {
    for (std::int64_t co = 0; co < Cout; ++co) {
        T acc = T(0);
        for (std::int64_t n = 0; n < N; ++n) {
            const T* __restrict gp = gy + (n * Cout + co) * HW;
            T s = T(0);
#pragma omp simd reduction(+ : s)
            for (std::int64_t p = 0; p < HW; ++p) s += gp[p];
            acc += s;
        }
        db[co] += acc;
    }
}

}  // namespace cbsn::detail
