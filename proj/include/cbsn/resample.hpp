#pragma once

#include "cbsn/ops.hpp"
#include "cbsn/rng.hpp"

namespace cbsn {

/// Per-cell pixel selection of the random subsampler: one (dy,dx) offset per
/// stride-s grid cell, shared by every batch item and channel of one call.
/// Reapplying the map selects the identical pixel positions, which is what
/// ties the two sides of the invariance loss together.
struct IndexMap {
    std::int64_t stride = 1;
    std::int64_t gh = 0, gw = 0;
    std::vector<std::uint8_t> dy, dx;  // gh*gw entries, each in [0, stride)

    std::int64_t cells() const { return gh * gw; }

    bool operator==(const IndexMap& o) const {
        return stride == o.stride && gh == o.gh && gw == o.gw && dy == o.dy && dx == o.dx;
    }
};

namespace detail {
inline void require_divisible(std::int64_t H, std::int64_t W, std::int64_t s, const char* who) {
    if (s < 1) throw std::invalid_argument(std::string(who) + ": stride must be >= 1");
    if (H % s != 0 || W % s != 0)
        throw std::invalid_argument(std::string(who) + ": stride " + std::to_string(s) +
                                    " does not divide spatial dims " + std::to_string(H) + "x" + std::to_string(W));
}
}  // namespace detail

inline IndexMap draw_index_map(std::int64_t H, std::int64_t W, std::int64_t s, Rng& rng) {
    detail::require_divisible(H, W, s, "draw_index_map");
    IndexMap m;
    m.stride = s;
    m.gh = H / s;
    m.gw = W / s;
    m.dy.resize(static_cast<std::size_t>(m.cells()));
    m.dx.resize(static_cast<std::size_t>(m.cells()));
    for (std::int64_t i = 0; i < m.cells(); ++i) {
        m.dy[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(rng.uniform_int(s));
        m.dx[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(rng.uniform_int(s));
    }
    return m;
}

/// Deterministic gather by a stored map (plain tensors).
template <typename T>
Tensor<T> subsample_with_map(const Tensor<T>& x, const IndexMap& m) {
    if (x.rank() != 4) throw std::invalid_argument("subsample_with_map: input must be [B,C,H,W]");
    const std::int64_t H = x.dim(2), W = x.dim(3), s = m.stride;
    if (m.gh * s != H || m.gw * s != W)
        throw std::invalid_argument("subsample_with_map: map dims " + std::to_string(m.gh) + "x" + std::to_string(m.gw) +
                                    " (stride " + std::to_string(s) + ") do not match input " + shape_str(x.shape));
    Tensor<T> y({x.dim(0), x.dim(1), m.gh, m.gw});
    for (std::int64_t b = 0; b < x.dim(0); ++b)
        for (std::int64_t c = 0; c < x.dim(1); ++c)
            for (std::int64_t i = 0; i < m.gh; ++i)
                for (std::int64_t j = 0; j < m.gw; ++j) {
                    const std::int64_t cell = i * m.gw + j;
                    y.at4(b, c, i, j) =
                        x.at4(b, c, s * i + m.dy[static_cast<std::size_t>(cell)], s * j + m.dx[static_cast<std::size_t>(cell)]);
                }
    return y;
}

/// Random subsampler RS_s: one uniformly random pixel per s x s cell. The
/// returned map can be reapplied so both loss branches select the same
/// positions.
template <typename T>
std::pair<Tensor<T>, IndexMap> random_subsample(const Tensor<T>& x, std::int64_t s, Rng& rng) {
    if (x.rank() != 4) throw std::invalid_argument("random_subsample: input must be [B,C,H,W]");
    IndexMap m = draw_index_map(x.dim(2), x.dim(3), s, rng);
    return {subsample_with_map(x, m), std::move(m)};
}

/// Differentiable gather on the tape; backward scatters gradients to the
/// selected positions and zeros elsewhere.
template <typename T>
Var subsample_with_map(Tape<T>& t, Var x, const IndexMap& m) {
    Tensor<T> y = subsample_with_map(t.value(x), m);
    const Shape in_shape = t.value(x).shape;
    return t.record(std::move(y), t.needs_grad(x), [x, m](Tape<T>& tp, Var out) {
        if (!tp.needs_grad(x)) return;
        const Tensor<T>& gy = tp.grad(out);
        Tensor<T>& gx = tp.grad(x);
        const std::int64_t s = m.stride;
        for (std::int64_t b = 0; b < gy.dim(0); ++b)
            for (std::int64_t c = 0; c < gy.dim(1); ++c)
                for (std::int64_t i = 0; i < m.gh; ++i)
                    for (std::int64_t j = 0; j < m.gw; ++j) {
                        const std::int64_t cell = i * m.gw + j;
                        gx.at4(b, c, s * i + m.dy[static_cast<std::size_t>(cell)],
                               s * j + m.dx[static_cast<std::size_t>(cell)]) += gy.at4(b, c, i, j);
                    }
    });
}

// --- pixel-shuffle downsampling (mosaic of the s^2 phase subimages) ---

namespace detail {
// pd_down layout: phase (p,q) occupies the (p,q) block of an s x s block
// grid, row-major by phase. pd_up inverts it exactly.
template <typename T, bool Down>
Tensor<T> pd_move(const Tensor<T>& x, std::int64_t s) {
    if (x.rank() != 4) throw std::invalid_argument("pd: input must be [B,C,H,W]");
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require_divisible(H, W, s, "pd");
    const std::int64_t h = H / s, w = W / s;
    Tensor<T> y(x.shape);
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t p = 0; p < s; ++p)
                for (std::int64_t q = 0; q < s; ++q)
                    for (std::int64_t i = 0; i < h; ++i)
                        for (std::int64_t j = 0; j < w; ++j) {
                            if constexpr (Down)
                                y.at4(b, c, p * h + i, q * w + j) = x.at4(b, c, s * i + p, s * j + q);
                            else
                                y.at4(b, c, s * i + p, s * j + q) = x.at4(b, c, p * h + i, q * w + j);
                        }
    return y;
}
}  // namespace detail

template <typename T>
Tensor<T> pd_down(const Tensor<T>& x, std::int64_t s) {
    return detail::pd_move<T, true>(x, s);
}

template <typename T>
Tensor<T> pd_up(const Tensor<T>& x, std::int64_t s) {
    return detail::pd_move<T, false>(x, s);
}

// --- space-to-batch / batch-to-space ---

/// Batch index b*s^2 + s*p + q holds phase (p,q) of image b.
template <typename T>
Tensor<T> s2b(const Tensor<T>& x, std::int64_t s) {
    if (x.rank() != 4) throw std::invalid_argument("s2b: input must be [B,C,H,W]");
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::require_divisible(H, W, s, "s2b");
    const std::int64_t h = H / s, w = W / s;
    Tensor<T> y({B * s * s, C, h, w});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t p = 0; p < s; ++p)
                for (std::int64_t q = 0; q < s; ++q)
                    for (std::int64_t i = 0; i < h; ++i)
                        for (std::int64_t j = 0; j < w; ++j)
                            y.at4(b * s * s + s * p + q, c, i, j) = x.at4(b, c, s * i + p, s * j + q);
    return y;
}

template <typename T>
Tensor<T> b2s(const Tensor<T>& x, std::int64_t s) {
    if (x.rank() != 4) throw std::invalid_argument("b2s: input must be [B,C,H,W]");
    const std::int64_t Bs = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (Bs % (s * s) != 0)
        throw std::invalid_argument("b2s: batch " + std::to_string(Bs) + " is not a multiple of s^2");
    const std::int64_t B = Bs / (s * s);
    Tensor<T> y({B, C, h * s, w * s});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t p = 0; p < s; ++p)
                for (std::int64_t q = 0; q < s; ++q)
                    for (std::int64_t i = 0; i < h; ++i)
                        for (std::int64_t j = 0; j < w; ++j)
                            y.at4(b, c, s * i + p, s * j + q) = x.at4(b * s * s + s * p + q, c, i, j);
    return y;
}

// Tape versions. These are permutations, so each backward applies the
// inverse rearrangement to the gradient.

template <typename T>
Var pd_down(Tape<T>& t, Var x, std::int64_t s) {
    Tensor<T> y = pd_down(t.value(x), s);
    return t.record(std::move(y), t.needs_grad(x), [x, s](Tape<T>& tp, Var out) {
        if (!tp.needs_grad(x)) return;
        Tensor<T> g = pd_up(tp.grad(out), s);
        Tensor<T>& gx = tp.grad(x);
        for (std::int64_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
    });
}

template <typename T>
Var pd_up(Tape<T>& t, Var x, std::int64_t s) {
    Tensor<T> y = pd_up(t.value(x), s);
    return t.record(std::move(y), t.needs_grad(x), [x, s](Tape<T>& tp, Var out) {
        if (!tp.needs_grad(x)) return;
        Tensor<T> g = pd_down(tp.grad(out), s);
        Tensor<T>& gx = tp.grad(x);
        for (std::int64_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
    });
}

template <typename T>
Var s2b(Tape<T>& t, Var x, std::int64_t s) {
    Tensor<T> y = s2b(t.value(x), s);
    return t.record(std::move(y), t.needs_grad(x), [x, s](Tape<T>& tp, Var out) {
        if (!tp.needs_grad(x)) return;
        Tensor<T> g = b2s(tp.grad(out), s);
        Tensor<T>& gx = tp.grad(x);
        for (std::int64_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
    });
}

template <typename T>
Var b2s(Tape<T>& t, Var x, std::int64_t s) {
    Tensor<T> y = b2s(t.value(x), s);
    return t.record(std::move(y), t.needs_grad(x), [x, s](Tape<T>& tp, Var out) {
        if (!tp.needs_grad(x)) return;
        Tensor<T> g = s2b(tp.grad(out), s);
        Tensor<T>& gx = tp.grad(x);
        for (std::int64_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
    });
}

// --- spatial autocorrelation ---

struct AutocorrResult {
    double r = 0.0;
    bool degenerate = false;  // constant input, correlation reported as 0
};

/// Pearson correlation between x[i,j] and x[i+dy,j+dx] over all valid
/// positions, pooled across batch items and channels.
template <typename T>
std::vector<AutocorrResult> autocorrelation(const Tensor<T>& x, const std::vector<std::pair<int, int>>& offsets) {
    if (x.rank() != 4) throw std::invalid_argument("autocorrelation: input must be [B,C,H,W]");
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<AutocorrResult> out;
    out.reserve(offsets.size());
    for (auto [dy, dx] : offsets) {
        const std::int64_t ady = std::abs(dy), adx = std::abs(dx);
        if (ady >= H || adx >= W)
            throw std::invalid_argument("autocorrelation: offset exceeds spatial extent");
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        std::int64_t n = 0;
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t i = 0; i < H - ady; ++i)
                    for (std::int64_t j = 0; j < W - adx; ++j) {
                        const std::int64_t i2 = i + ady, j2 = j + adx;
                        const std::int64_t ia = dy >= 0 ? i : i2, ja = dx >= 0 ? j : j2;
                        const std::int64_t ib = dy >= 0 ? i2 : i, jb = dx >= 0 ? j2 : j;
                        const double va = x.at4(b, c, ia, ja);
                        const double vb = x.at4(b, c, ib, jb);
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                        ++n;
                    }
        const double nd = static_cast<double>(n);
        const double cov = sab / nd - (sa / nd) * (sb / nd);
        const double va = saa / nd - (sa / nd) * (sa / nd);
        const double vb = sbb / nd - (sb / nd) * (sb / nd);
        AutocorrResult r;
        if (va <= 0.0 || vb <= 0.0) {
            r.r = 0.0;
            r.degenerate = true;
        } else if (dy == 0 && dx == 0) {
            r.r = 1.0;
        } else {
            r.r = cov / std::sqrt(va * vb);
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace cbsn
