#pragma once

#include <string>

#include "cbsn/rng.hpp"
#include "cbsn/tensor.hpp"

namespace cbsn {

enum class NoiseKind { IidGaussian, CorrelatedGaussian, Heteroscedastic };
enum class CleanKind { Gradient, Checker, BandLimited };

/// Synthetic noise process on signals in [0,1]. Correlated noise is iid
/// Gaussian pushed through a small normalized kernel (2x2 box by default),
/// rescaled so the marginal std stays sigma; heteroscedastic variance is
/// a*y+b.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::IidGaussian;
    double sigma = 0.1;
    std::int64_t corr_kh = 2, corr_kw = 2;
    std::vector<double> corr_kernel{0.25, 0.25, 0.25, 0.25};  // sums to 1
    double het_a = 0.01, het_b = 0.0001;

    void validate() const {
        if (sigma < 0) throw std::invalid_argument("NoiseSpec: sigma must be >= 0");
        if (kind == NoiseKind::CorrelatedGaussian) {
            if (corr_kh < 1 || corr_kw < 1 ||
                static_cast<std::int64_t>(corr_kernel.size()) != corr_kh * corr_kw)
                throw std::invalid_argument("NoiseSpec: bad correlation kernel dims");
            double s = 0;
            for (double v : corr_kernel) s += v;
            if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("NoiseSpec: correlation kernel must sum to 1");
        }
        if (kind == NoiseKind::Heteroscedastic) {
            // a*y+b >= 0 over y in [0,1]
            if (het_b < 0 || het_a + het_b < 0)
                throw std::invalid_argument("NoiseSpec: heteroscedastic variance must be non-negative on [0,1]");
        }
    }
};

/// Per-image normalization statistics, with the 1/sqrt(m) floor on std.
struct NormStats {
    double mean = 0.0;
    double std = 1.0;
};

/// Synthetic clean images in [0,1]. Band-limited images are iid noise blurred
/// with a 9x9 Gaussian and min-max rescaled, which gives them the strong
/// short-range correlation natural images have.
template <typename T = float>
Tensor<T> gen_clean(CleanKind kind, std::int64_t H, std::int64_t W, std::int64_t C, Rng& rng,
                    std::int64_t checker_period = 8) {
    if (H < 1 || W < 1 || C < 1) throw std::invalid_argument("gen_clean: dims must be >= 1");
    Tensor<T> img({C, H, W});
    switch (kind) {
        case CleanKind::Gradient: {
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t i = 0; i < H; ++i)
                    for (std::int64_t j = 0; j < W; ++j)
                        img.data[static_cast<std::size_t>((c * H + i) * W + j)] =
                            W > 1 ? static_cast<T>(static_cast<double>(j) / static_cast<double>(W - 1)) : T(0);
            break;
        }
        case CleanKind::Checker: {
            if (checker_period < 1) throw std::invalid_argument("gen_clean: checker period must be >= 1");
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t i = 0; i < H; ++i)
                    for (std::int64_t j = 0; j < W; ++j) {
                        const bool on = ((i / checker_period) + (j / checker_period)) % 2 == 0;
                        img.data[static_cast<std::size_t>((c * H + i) * W + j)] = on ? T(0.75) : T(0.25);
                    }
            break;
        }
        case CleanKind::BandLimited: {
            // 9x9 Gaussian (sigma 2) blur of an iid field, separable passes
            constexpr int R = 4;
            double g[2 * R + 1];
            double gs = 0;
            for (int t = -R; t <= R; ++t) {
                g[t + R] = std::exp(-0.5 * t * t / 4.0);
                gs += g[t + R];
            }
            for (double& v : g) v /= gs;

            std::vector<double> field(static_cast<std::size_t>(H * W));
            std::vector<double> tmp(field.size());
            for (std::int64_t c = 0; c < C; ++c) {
                for (auto& v : field) v = rng.normal();
                // horizontal then vertical, clamped borders
                for (std::int64_t i = 0; i < H; ++i)
                    for (std::int64_t j = 0; j < W; ++j) {
                        double acc = 0;
                        for (int t = -R; t <= R; ++t) {
                            const std::int64_t jj = std::clamp<std::int64_t>(j + t, 0, W - 1);
                            acc += g[t + R] * field[static_cast<std::size_t>(i * W + jj)];
                        }
                        tmp[static_cast<std::size_t>(i * W + j)] = acc;
                    }
                double lo = 1e300, hi = -1e300;
                for (std::int64_t i = 0; i < H; ++i)
                    for (std::int64_t j = 0; j < W; ++j) {
                        double acc = 0;
                        for (int t = -R; t <= R; ++t) {
                            const std::int64_t ii = std::clamp<std::int64_t>(i + t, 0, H - 1);
                            acc += g[t + R] * tmp[static_cast<std::size_t>(ii * W + j)];
                        }
                        field[static_cast<std::size_t>(i * W + j)] = acc;
                        lo = std::min(lo, acc);
                        hi = std::max(hi, acc);
                    }
                const double scale = hi > lo ? 1.0 / (hi - lo) : 0.0;
                for (std::int64_t p = 0; p < H * W; ++p)
                    img.data[static_cast<std::size_t>(c * H * W + p)] =
                        static_cast<T>((field[static_cast<std::size_t>(p)] - lo) * scale);
            }
            break;
        }
    }
    return img;
}

/// x = y + noise with E[x|y] = y. The correlated field is generated on an
/// enlarged grid and valid-correlated so it is exactly stationary.
template <typename T>
Tensor<T> add_noise(const Tensor<T>& y, const NoiseSpec& spec, Rng& rng) {
    spec.validate();
    Tensor<T> x = y;
    if (spec.sigma == 0.0 && spec.kind != NoiseKind::Heteroscedastic) return x;
    if (y.rank() < 2) throw std::invalid_argument("add_noise: expected at least 2-d image tensor");
    const std::int64_t W = y.shape.back();
    const std::int64_t H = y.shape[y.shape.size() - 2];
    const std::int64_t planes = y.numel() / (H * W);

    switch (spec.kind) {
        case NoiseKind::IidGaussian: {
            for (auto& v : x.data) v = static_cast<T>(static_cast<double>(v) + spec.sigma * rng.normal());
            break;
        }
        case NoiseKind::CorrelatedGaussian: {
            double k2 = 0;
            for (double v : spec.corr_kernel) k2 += v * v;
            const double gain = spec.sigma / std::sqrt(k2);
            const std::int64_t Hg = H + spec.corr_kh - 1, Wg = W + spec.corr_kw - 1;
            std::vector<double> g(static_cast<std::size_t>(Hg * Wg));
            for (std::int64_t p = 0; p < planes; ++p) {
                for (auto& v : g) v = rng.normal();
                for (std::int64_t i = 0; i < H; ++i)
                    for (std::int64_t j = 0; j < W; ++j) {
                        double acc = 0;
                        for (std::int64_t u = 0; u < spec.corr_kh; ++u)
                            for (std::int64_t v = 0; v < spec.corr_kw; ++v)
                                acc += spec.corr_kernel[static_cast<std::size_t>(u * spec.corr_kw + v)] *
                                       g[static_cast<std::size_t>((i + u) * Wg + (j + v))];
                        auto& px = x.data[static_cast<std::size_t>(p * H * W + i * W + j)];
                        px = static_cast<T>(static_cast<double>(px) + gain * acc);
                    }
            }
            break;
        }
        case NoiseKind::Heteroscedastic: {
            for (auto& v : x.data) {
                const double var = spec.het_a * static_cast<double>(v) + spec.het_b;
                v = static_cast<T>(static_cast<double>(v) + std::sqrt(std::max(0.0, var)) * rng.normal());
            }
            break;
        }
    }
    return x;
}

/// x_n = (x - mean) / max(std, 1/sqrt(m)) over all m elements of the image.
template <typename T>
std::pair<Tensor<T>, NormStats> normalize(const Tensor<T>& x) {
    const std::int64_t m = x.numel();
    if (m == 0) throw std::invalid_argument("normalize: empty tensor");
    double sum = 0;
    for (T v : x.data) sum += static_cast<double>(v);
    const double mean = sum / static_cast<double>(m);
    double ss = 0;
    for (T v : x.data) {
        const double d = static_cast<double>(v) - mean;
        ss += d * d;
    }
    const double std_floor = 1.0 / std::sqrt(static_cast<double>(m));
    const double std = std::max(std::sqrt(ss / static_cast<double>(m)), std_floor);
    Tensor<T> out(x.shape);
    for (std::int64_t i = 0; i < m; ++i)
        out.data[i] = static_cast<T>((static_cast<double>(x.data[i]) - mean) / std);
    return {std::move(out), NormStats{mean, std}};
}

template <typename T>
Tensor<T> denormalize(const Tensor<T>& x_n, const NormStats& stats) {
    Tensor<T> out(x_n.shape);
    for (std::int64_t i = 0; i < x_n.numel(); ++i)
        out.data[i] = static_cast<T>(static_cast<double>(x_n.data[i]) * stats.std + stats.mean);
    return out;
}

}  // namespace cbsn
