#pragma once

#include <functional>

#include "cbsn/rng.hpp"
#include "cbsn/tensor.hpp"

namespace cbsn {

/// PSNR in dB for signals in [0,1]; identical inputs report the 99 dB
/// sentinel instead of infinity, and larger values are capped there too.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// dynamic range 1, maps computed on the valid region, channel-averaged.
/// Inputs are [C,H,W] or [B,C,H,W].
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "ssim");
    if (a.rank() != 3 && a.rank() != 4) throw std::invalid_argument("ssim: expected [C,H,W] or [B,C,H,W]");
    const std::int64_t W = a.shape.back();
    const std::int64_t H = a.shape[a.shape.size() - 2];
    const std::int64_t planes = a.numel() / (H * W);
    constexpr int R = 5;  // 11x11
    if (H < 2 * R + 1 || W < 2 * R + 1) throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    double win[2 * R + 1];
    double ws = 0;
    for (int t = -R; t <= R; ++t) {
        win[t + R] = std::exp(-0.5 * t * t / (1.5 * 1.5));
        ws += win[t + R];
    }
    for (double& v : win) v /= ws;

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;

    std::vector<double> mu_a(static_cast<std::size_t>(H * W)), mu_b(mu_a.size()), saa(mu_a.size()), sbb(mu_a.size()),
        sab(mu_a.size());
    std::vector<double> row(mu_a.size());

    auto blur = [&](const std::function<double(std::int64_t)>& src, std::vector<double>& dst) {
        // separable passes, valid region only
        for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = R; j < W - R; ++j) {
                double acc = 0;
                for (int t = -R; t <= R; ++t) acc += win[t + R] * src(i * W + j + t);
                row[static_cast<std::size_t>(i * W + j)] = acc;
            }
        for (std::int64_t i = R; i < H - R; ++i)
            for (std::int64_t j = R; j < W - R; ++j) {
                double acc = 0;
                for (int t = -R; t <= R; ++t) acc += win[t + R] * row[static_cast<std::size_t>((i + t) * W + j)];
                dst[static_cast<std::size_t>(i * W + j)] = acc;
            }
    };

    for (std::int64_t p = 0; p < planes; ++p) {
        const T* pa = a.ptr() + p * H * W;
        const T* pb = b.ptr() + p * H * W;
        blur([&](std::int64_t q) { return static_cast<double>(pa[q]); }, mu_a);
        blur([&](std::int64_t q) { return static_cast<double>(pb[q]); }, mu_b);
        blur([&](std::int64_t q) { return static_cast<double>(pa[q]) * static_cast<double>(pa[q]); }, saa);
        blur([&](std::int64_t q) { return static_cast<double>(pb[q]) * static_cast<double>(pb[q]); }, sbb);
        blur([&](std::int64_t q) { return static_cast<double>(pa[q]) * static_cast<double>(pb[q]); }, sab);

        double acc = 0;
        std::int64_t n = 0;
        for (std::int64_t i = R; i < H - R; ++i)
            for (std::int64_t j = R; j < W - R; ++j) {
                const std::size_t q = static_cast<std::size_t>(i * W + j);
                const double ma = mu_a[q], mb = mu_b[q];
                const double va = saa[q] - ma * ma, vb = sbb[q] - mb * mb, cab = sab[q] - ma * mb;
                const double num = (2 * ma * mb + c1) * (2 * cab + c2);
                const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                acc += num / den;
                ++n;
            }
        total += acc / static_cast<double>(n);
    }
    return total / static_cast<double>(planes);
}

/// Period-s mosaic detector: the residual against the per-cell (s x s block)
/// mean is split into s^2 phase classes; the score is the variance across
/// the phase means. Phase-stationary images score ~0, period-s mosaics
/// score high, and a global constant shift changes nothing.
template <typename T>
double checkerboard_score(const Tensor<T>& x, std::int64_t s) {
    if (s < 1) throw std::invalid_argument("checkerboard_score: period must be >= 1");
    if (x.rank() < 2) throw std::invalid_argument("checkerboard_score: expected an image tensor");
    const std::int64_t W = x.shape.back();
    const std::int64_t H = x.shape[x.shape.size() - 2];
    const std::int64_t planes = x.numel() / (H * W);

    std::vector<double> phase_sum(static_cast<std::size_t>(s * s), 0.0);
    std::vector<std::int64_t> phase_n(static_cast<std::size_t>(s * s), 0);

    for (std::int64_t p = 0; p < planes; ++p) {
        const T* px = x.ptr() + p * H * W;
        for (std::int64_t ci = 0; ci < H; ci += s)
            for (std::int64_t cj = 0; cj < W; cj += s) {
                const std::int64_t ch = std::min(s, H - ci), cw = std::min(s, W - cj);
                double mean = 0;
                for (std::int64_t u = 0; u < ch; ++u)
                    for (std::int64_t v = 0; v < cw; ++v) mean += static_cast<double>(px[(ci + u) * W + cj + v]);
                mean /= static_cast<double>(ch * cw);
                for (std::int64_t u = 0; u < ch; ++u)
                    for (std::int64_t v = 0; v < cw; ++v) {
                        const std::size_t phase = static_cast<std::size_t>(u * s + v);
                        phase_sum[phase] += static_cast<double>(px[(ci + u) * W + cj + v]) - mean;
                        phase_n[phase] += 1;
                    }
            }
    }

    std::vector<double> phase_mean(phase_sum.size(), 0.0);
    double overall = 0;
    std::int64_t classes = 0;
    for (std::size_t q = 0; q < phase_sum.size(); ++q) {
        if (phase_n[q] == 0) continue;
        phase_mean[q] = phase_sum[q] / static_cast<double>(phase_n[q]);
        overall += phase_mean[q];
        ++classes;
    }
    if (classes == 0) return 0.0;
    overall /= static_cast<double>(classes);
    double var = 0;
    for (std::size_t q = 0; q < phase_sum.size(); ++q) {
        if (phase_n[q] == 0) continue;
        const double d = phase_mean[q] - overall;
        var += d * d;
    }
    return var / static_cast<double>(classes);
}

struct BlindSpotReport {
    double blind_max_delta = 0.0;        // exact 0 required of a blind network
    double nonblind_delta_frac = 0.0;    // fraction of trials with any change
    bool degenerate = false;             // nothing responded (e.g. zero weights)
};

/// Perturbation test of the blind-spot property. `forward` maps ([B,C,H,W],
/// blind flag) to the network output; for each trial a random pixel is
/// perturbed in every channel and the output at that pixel is compared
/// exactly.
template <typename T>
BlindSpotReport blind_spot_test(const std::function<Tensor<T>(const Tensor<T>&, bool)>& forward, std::int64_t channels,
                                std::int64_t H, std::int64_t W, std::int64_t trials, Rng& rng) {
    BlindSpotReport rep;
    std::int64_t nonblind_hits = 0;
    for (std::int64_t trial = 0; trial < trials; ++trial) {
        Tensor<T> x({1, channels, H, W});
        for (auto& v : x.data) v = static_cast<T>(rng.normal());
        const std::int64_t i = rng.uniform_int(H), j = rng.uniform_int(W);

        Tensor<T> x2 = x;
        for (std::int64_t c = 0; c < channels; ++c)
            x2.at4(0, c, i, j) += static_cast<T>(1.0 + 2.0 * rng.uniform()) * (rng.coin() ? T(1) : T(-1));

        for (bool blind : {true, false}) {
            Tensor<T> y1 = forward(x, blind);
            Tensor<T> y2 = forward(x2, blind);
            double delta = 0;
            for (std::int64_t c = 0; c < y1.dim(1); ++c)
                delta = std::max(delta, std::abs(static_cast<double>(y1.at4(0, c, i, j)) -
                                                 static_cast<double>(y2.at4(0, c, i, j))));
            if (blind)
                rep.blind_max_delta = std::max(rep.blind_max_delta, delta);
            else if (delta > 0)
                ++nonblind_hits;
        }
    }
    rep.nonblind_delta_frac = trials > 0 ? static_cast<double>(nonblind_hits) / static_cast<double>(trials) : 0.0;
    rep.degenerate = rep.blind_max_delta == 0.0 && nonblind_hits == 0;
    return rep;
}

}  // namespace cbsn
