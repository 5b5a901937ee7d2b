#pragma once

#include "cbsn/model.hpp"
#include "cbsn/noisegen.hpp"
#include "cbsn/resample.hpp"

namespace cbsn {

enum class Downsampler { S2B, PD, RS };
enum class ScheduleMode { Warmup, Zero, One, Inf };

/// Loss configuration. rs_stride is the invariance-loss stride (a),
/// blind_stride the blind-loss stride (b). The downsampler and schedule
/// selectors realize the ablation grids.
struct LossWeights {
    double lambda_inv = 2.0;
    std::int64_t warmup_iters = 200000;
    std::int64_t rs_stride = 2;      // a
    std::int64_t blind_stride = 5;   // b
    Downsampler blind_downsampler = Downsampler::S2B;
    Downsampler inv_downsampler = Downsampler::RS;
    ScheduleMode schedule = ScheduleMode::Warmup;

    void validate() const {
        if (lambda_inv < 0) throw std::invalid_argument("LossWeights: lambda_inv must be >= 0");
        if (rs_stride < 1 || blind_stride < 1) throw std::invalid_argument("LossWeights: strides must be >= 1");
    }
};

namespace detail {

/// Scalar square root with subgradient 0 at zero.
template <typename T>
Var sqrt_scalar(Tape<T>& t, Var x) {
    const Tensor<T>& xv = t.value(x);
    if (xv.numel() != 1) throw std::invalid_argument("sqrt_scalar: expects a scalar");
    Tensor<T> y({1});
    y.data[0] = std::sqrt(std::max(T(0), xv.data[0]));
    return t.record(std::move(y), t.needs_grad(x), [x](Tape<T>& tp, Var out) {
        if (!tp.needs_grad(x)) return;
        const T v = tp.value(out).data[0];
        if (v > T(0)) tp.grad(x).data[0] += tp.grad(out).data[0] / (T(2) * v);
    });
}

/// Gather the masked pixel positions (all channels) into a flat vector.
template <typename T>
Var gather_pixels(Tape<T>& t, Var x, const std::vector<std::int64_t>& pix) {
    const Tensor<T>& xv = t.value(x);
    if (xv.rank() != 4) throw std::invalid_argument("gather_pixels: input must be [B,C,H,W]");
    const std::int64_t C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor<T> y({static_cast<std::int64_t>(pix.size()) * C});
    std::int64_t o = 0;
    for (std::int64_t p : pix) {
        const std::int64_t b = p / HW, q = p % HW;
        for (std::int64_t c = 0; c < C; ++c) y.data[o++] = xv.data[(b * C + c) * HW + q];
    }
    return t.record(std::move(y), t.needs_grad(x), [x, pix, C, HW](Tape<T>& tp, Var out) {
        if (!tp.needs_grad(x)) return;
        const Tensor<T>& gy = tp.grad(out);
        Tensor<T>& gx = tp.grad(x);
        std::int64_t o = 0;
        for (std::int64_t p : pix) {
            const std::int64_t b = p / HW, q = p % HW;
            for (std::int64_t c = 0; c < C; ++c) gx.data[(b * C + c) * HW + q] += gy.data[o++];
        }
    });
}

/// Apply the configured downsampler to a tape value and to the raw input
/// tensor with the same selection, so both loss branches see identical
/// positions.
template <typename T>
struct DownsampledPair {
    Var from_output;     // d_s(f(x))
    Tensor<T> from_input;  // d_s(x), plain tensor
};

template <typename T>
DownsampledPair<T> downsample_both(Tape<T>& t, Var fx, const Tensor<T>& x, Downsampler d, std::int64_t s, Rng& rng) {
    switch (d) {
        case Downsampler::RS: {
            IndexMap m = draw_index_map(x.dim(2), x.dim(3), s, rng);
            return {subsample_with_map(t, fx, m), subsample_with_map(x, m)};
        }
        case Downsampler::S2B:
            return {s2b(t, fx, s), s2b(x, s)};
        case Downsampler::PD:
            return {pd_down(t, fx, s), pd_down(x, s)};
    }
    throw std::logic_error("downsample_both: unreachable");
}

}  // namespace detail

/// L_self = pixel-averaged L1 between the non-blind output and the input.
template <typename T>
Var l_self(Tape<T>& t, Var f_x, Var x) {
    return mean_abs(t, f_x, x);
}

namespace detail {

/// Shared core of the invariance losses: g = d_s(f(x)) against the frozen
/// blind output h = sg(f_M(d_s(x))). Gradient flows through g only.
template <typename T>
std::pair<Var, Var> inv_pair(Tape<T>& t, const BoundParams<T>& p, Var fx, const Tensor<T>& x, Downsampler d,
                             std::int64_t s, Rng& rng) {
    DownsampledPair<T> ds = downsample_both(t, fx, x, d, s, rng);
    Var sub_x = t.leaf(std::move(ds.from_input), false);
    Var h = stop_gradient(t, cbsn_forward(t, p, sub_x, true));
    return {ds.from_output, h};
}

}  // namespace detail

/// Downsampled invariance loss, L1 form (Eq. 7 shape): one random index map
/// shared by both branches, blind branch frozen by stop-gradient.
template <typename T>
Var l_inv_rs(Tape<T>& t, const BoundParams<T>& p, const Tensor<T>& x, std::int64_t a, Rng& rng) {
    Var fx = cbsn_forward(t, p, t.leaf(x, false), false);
    auto [g, h] = detail::inv_pair(t, p, fx, x, Downsampler::RS, a, rng);
    return mean_abs(t, g, h);
}

/// RMS ablation variant: sqrt(s^2/m)*||g - h||_2, which reduces to the RMS of
/// the subsampled differences.
template <typename T>
Var l_inv_rms(Tape<T>& t, const BoundParams<T>& p, const Tensor<T>& x, std::int64_t a, Rng& rng) {
    Var fx = cbsn_forward(t, p, t.leaf(x, false), false);
    auto [g, h] = detail::inv_pair(t, p, fx, x, Downsampler::RS, a, rng);
    return detail::sqrt_scalar(t, mean_sq(t, g, h));
}

template <typename T>
struct CbsnLossParts {
    Var total;
    Var self_term;
    Var inv_term;
};

/// L_CBSN = L_self + lambda_inv * L_invRS, reusing one non-blind forward for
/// both terms.
template <typename T>
CbsnLossParts<T> l_cbsn(Tape<T>& t, const BoundParams<T>& p, const Tensor<T>& x, const LossWeights& w, Rng& rng) {
    w.validate();
    Var xv = t.leaf(x, false);
    Var fx = cbsn_forward(t, p, xv, false);
    Var self_term = l_self(t, fx, xv);
    auto [g, h] = detail::inv_pair(t, p, fx, x, w.inv_downsampler, w.rs_stride, rng);
    Var inv_term = mean_abs(t, g, h);
    Var total = add(t, self_term, scale(t, inv_term, static_cast<T>(w.lambda_inv)));
    return {total, self_term, inv_term};
}

/// Blind self-supervised loss. S2B and PD route the input through the
/// rearrangement, apply the blind network and invert; RS has no inverse, so
/// the comparison happens in the subsampled domain.
template <typename T>
Var l_blind(Tape<T>& t, const BoundParams<T>& p, const Tensor<T>& x, std::int64_t b, Downsampler down, Rng& rng) {
    Var xv = t.leaf(x, false);
    switch (down) {
        case Downsampler::S2B: {
            Var sub = t.leaf(s2b(x, b), false);
            Var y = cbsn_forward(t, p, sub, true);
            return mean_abs(t, b2s(t, y, b), xv);
        }
        case Downsampler::PD: {
            Var sub = t.leaf(pd_down(x, b), false);
            Var y = cbsn_forward(t, p, sub, true);
            return mean_abs(t, pd_up(t, y, b), xv);
        }
        case Downsampler::RS: {
            IndexMap m = draw_index_map(x.dim(2), x.dim(3), b, rng);
            Var sub = t.leaf(subsample_with_map(x, m), false);
            Var y = cbsn_forward(t, p, sub, true);
            return mean_abs(t, y, sub);
        }
    }
    throw std::logic_error("l_blind: unreachable");
}

/// Warm-up weight, linear from 0 to 1 over warmup_iters.
inline double lambda_schedule(std::int64_t iter, std::int64_t warmup_iters) {
    if (iter < 0) throw std::invalid_argument("lambda_schedule: iter must be >= 0");
    if (warmup_iters <= 0) return 1.0;
    return std::min(static_cast<double>(iter) / static_cast<double>(warmup_iters), 1.0);
}

template <typename T>
struct TotalLossParts {
    Var total;
    Var blind;      // invalid when the schedule drops the blind loss
    Var self_term;  // invalid when L_CBSN was skipped
    Var inv_term;
    double lambda_sch = 0.0;

    double value_or_zero(const Tape<T>& t, Var v) const { return v.valid() ? static_cast<double>(t.value(v).data[0]) : 0.0; }
};

/// L_total = L_blind + lambda_sch * L_CBSN, with the Table-4 regimes
/// selectable: Warmup ramps lambda_sch, Zero trains blind-only, One fixes
/// lambda_sch=1, Inf drops the blind loss.
template <typename T>
TotalLossParts<T> l_total(Tape<T>& t, const BoundParams<T>& p, const Tensor<T>& x, const LossWeights& w,
                          std::int64_t iter, Rng& rng) {
    w.validate();
    TotalLossParts<T> parts;
    switch (w.schedule) {
        case ScheduleMode::Warmup:
            parts.lambda_sch = lambda_schedule(iter, w.warmup_iters);
            break;
        case ScheduleMode::Zero:
            parts.lambda_sch = 0.0;
            break;
        case ScheduleMode::One:
            parts.lambda_sch = 1.0;
            break;
        case ScheduleMode::Inf:
            parts.lambda_sch = 0.0;  // weight is moot; the blind loss is dropped
            break;
    }

    if (w.schedule == ScheduleMode::Inf) {
        CbsnLossParts<T> c = l_cbsn(t, p, x, w, rng);
        parts.total = c.total;
        parts.self_term = c.self_term;
        parts.inv_term = c.inv_term;
        return parts;
    }

    parts.blind = l_blind(t, p, x, w.blind_stride, w.blind_downsampler, rng);
    if (parts.lambda_sch == 0.0) {
        // nothing to add; keeps L_total(iter=0) == L_blind bitwise
        parts.total = parts.blind;
        return parts;
    }
    CbsnLossParts<T> c = l_cbsn(t, p, x, w, rng);
    parts.self_term = c.self_term;
    parts.inv_term = c.inv_term;
    parts.total = add(t, parts.blind, scale(t, c.total, static_cast<T>(parts.lambda_sch)));
    return parts;
}

/// Noise2Same baseline (ablation): masking-based invariance with a random
/// pixel subset J. Masked pixels are filled with a uniformly chosen 3x3
/// neighbor, a baseline-only choice. The network runs non-blind in both
/// passes and gradient flows through both.
template <typename T>
Var l_n2same(Tape<T>& t, const BoundParams<T>& p, const Tensor<T>& x, double lambda_inv, Rng& rng,
             double mask_fraction = 1.0 / 64.0) {
    if (x.rank() != 4) throw std::invalid_argument("l_n2same: input must be [B,C,H,W]");
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);

    std::vector<std::int64_t> pix;  // flat (b,i,j) indices
    Tensor<T> masked = x;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j) {
                if (rng.uniform() >= mask_fraction) continue;
                pix.push_back(b * H * W + i * W + j);
                // replace all channels with a random neighbor's value
                std::int64_t di, dj;
                do {
                    di = rng.uniform_int(3) - 1;
                    dj = rng.uniform_int(3) - 1;
                } while (di == 0 && dj == 0);
                const std::int64_t ii = std::clamp<std::int64_t>(i + di, 0, H - 1);
                const std::int64_t jj = std::clamp<std::int64_t>(j + dj, 0, W - 1);
                for (std::int64_t c = 0; c < C; ++c) masked.at4(b, c, i, j) = x.at4(b, c, ii, jj);
            }

    Var xv = t.leaf(x, false);
    Var f1 = cbsn_forward(t, p, xv, false);
    Var self_term = mean_sq(t, f1, xv);
    if (pix.empty()) return self_term;

    Var f2 = cbsn_forward(t, p, t.leaf(std::move(masked), false), false);
    Var g1 = detail::gather_pixels(t, f1, pix);
    Var g2 = detail::gather_pixels(t, f2, pix);
    Var rms = detail::sqrt_scalar(t, mean_sq(t, g1, g2));
    return add(t, self_term, scale(t, rms, static_cast<T>(lambda_inv)));
}

// --- Proposition 1 as an executable Monte-Carlo inequality check ---

struct PropositionReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double stderr_total = 0.0;
    double slack = 0.0;  // rhs - lhs
    bool holds = false;
};

/// Monte-Carlo estimate of both sides of the downsampled-invariance upper
/// bound for a small random linear conv network f and its exact blind twin
/// f_M (shared weights, center-masked), on iid-Gaussian noise where the
/// zero-correlation assumption holds exactly. Norms are squared Euclidean,
/// matching the bound's statement; the invariance term carries the
/// 2*sqrt(m*s^2) factor.
inline PropositionReport check_proposition(std::int64_t field_size, double sigma, std::int64_t trials, Rng& rng,
                                           std::int64_t stride = 2, double weight_scale = 1.0) {
    if (trials < 100) throw std::invalid_argument("check_proposition: need at least 100 trials");
    if (field_size < 2 * stride || field_size % stride != 0)
        throw std::invalid_argument("check_proposition: field size must be a positive multiple of the stride");
    if (sigma < 0 || sigma > 1)
        throw std::invalid_argument("check_proposition: sigma must lie in [0,1] so Var(x|y) <= 1 holds");

    const std::int64_t m = field_size * field_size;

    // random linear f: one 3x3 conv, 1 channel; f_M masks its center.
    // weight_scale 0 gives the zero network, for which both sides agree in
    // expectation.
    Tensor<double> w({1, 1, 3, 3});
    for (auto& v : w.data) v = weight_scale * rng.normal() / 3.0;
    Tensor<double> bias({1});
    const Tensor<double> blind_mask = conditional_mask<double>(3, true);

    auto conv = [&](const Tensor<double>& in, bool blind) {
        Tensor<double> out(in.shape);
        detail::conv2d_forward(in.ptr(), out.ptr(), w.ptr(), bias.ptr(), blind ? blind_mask.ptr() : nullptr,
                               in.dim(0), 1, in.dim(2), in.dim(3), 1, 3, 1);
        return out;
    };
    auto sumsq = [](const Tensor<double>& a, const Tensor<double>& b) {
        double s = 0;
        for (std::int64_t i = 0; i < a.numel(); ++i) {
            const double d = a.data[i] - b.data[i];
            s += d * d;
        }
        return s;
    };

    std::vector<double> lhs_samples;   // A_t = ||f(x)-y||^2 + ||x-y||^2
    std::vector<double> self_samples;  // C_t = ||f(x)-x||^2
    std::vector<double> diff_samples;  // C_t - A_t
    std::vector<double> inv_samples;   // B_t = ||d_s(f(x)) - f_M(d_s(x))||^2
    lhs_samples.reserve(static_cast<std::size_t>(trials));
    self_samples.reserve(static_cast<std::size_t>(trials));
    diff_samples.reserve(static_cast<std::size_t>(trials));
    inv_samples.reserve(static_cast<std::size_t>(trials));

    NoiseSpec noise;
    noise.kind = NoiseKind::IidGaussian;
    noise.sigma = sigma;

    for (std::int64_t t = 0; t < trials; ++t) {
        Tensor<double> y3 = gen_clean<double>(CleanKind::BandLimited, field_size, field_size, 1, rng);
        Tensor<double> y({1, 1, field_size, field_size}, std::move(y3.data));
        Tensor<double> x = add_noise(y, noise, rng);

        Tensor<double> fx = conv(x, false);
        const double lhs_t = sumsq(fx, y) + sumsq(x, y);
        const double self_t = sumsq(fx, x);

        IndexMap map = draw_index_map(field_size, field_size, stride, rng);
        Tensor<double> ds_fx = subsample_with_map(fx, map);
        Tensor<double> fm_ds = conv(subsample_with_map(x, map), true);
        const double inv_t = sumsq(ds_fx, fm_ds);

        lhs_samples.push_back(lhs_t);
        self_samples.push_back(self_t);
        diff_samples.push_back(self_t - lhs_t);
        inv_samples.push_back(inv_t);
    }

    auto mean_se = [](const std::vector<double>& v) {
        double mu = 0;
        for (double s : v) mu += s;
        mu /= static_cast<double>(v.size());
        double var = 0;
        for (double s : v) var += (s - mu) * (s - mu);
        var /= static_cast<double>(v.size() - 1);
        return std::pair{mu, std::sqrt(var / static_cast<double>(v.size()))};
    };

    const auto [mean_lhs, se_lhs] = mean_se(lhs_samples);
    const auto [mean_self, se_self] = mean_se(self_samples);
    const auto [mean_diff, se_diff] = mean_se(diff_samples);
    const auto [mean_inv, se_inv] = mean_se(inv_samples);
    (void)se_lhs;
    (void)se_self;

    const double factor = 2.0 * std::sqrt(static_cast<double>(m * stride * stride));
    const double inv_sqrt = std::sqrt(std::max(0.0, mean_inv));

    PropositionReport rep;
    rep.lhs = mean_lhs;
    rep.rhs = mean_self + factor * inv_sqrt;
    rep.slack = mean_diff + factor * inv_sqrt;  // = rhs - lhs with paired samples

    // se of the paired difference, plus delta-method error for the sqrt
    // term; a zero network gives mean_inv == 0 and contributes nothing
    const double se_sqrt = mean_inv > 0 ? factor * se_inv / (2.0 * inv_sqrt) : 0.0;
    rep.stderr_total = std::sqrt(se_diff * se_diff + se_sqrt * se_sqrt);
    rep.holds = rep.slack >= -3.0 * rep.stderr_total;
    return rep;
}

}  // namespace cbsn
