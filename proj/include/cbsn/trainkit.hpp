#pragma once

#include <functional>

#include "cbsn/losses.hpp"

namespace cbsn {

/// Optimizer, schedule and cropping settings. The defaults carry the paper
/// recipe; desk_* presets scale it down to something a CPU finishes in
/// minutes.
struct TrainConfig {
    double lr0 = 1e-4;
    std::int64_t lr_halve_every = 100000;
    double lr_floor = 2e-5;
    std::int64_t total_iters = 400000;
    std::int64_t batch = 4;
    std::int64_t patch = 240;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t seed = 1;
    std::int64_t checkpoint_every = 500;
    std::int64_t log_every = 50;
    bool debug_checks = false;

    void validate(const LossWeights& w) const {
        if (lr_floor > lr0) throw std::invalid_argument("TrainConfig: lr_floor must not exceed lr0");
        if (batch < 1 || patch < 1 || total_iters < 0) throw std::invalid_argument("TrainConfig: bad counts");
        if (patch % (w.rs_stride * w.blind_stride) != 0)
            throw std::invalid_argument("TrainConfig: patch " + std::to_string(patch) +
                                        " must be divisible by rs_stride*blind_stride = " +
                                        std::to_string(w.rs_stride * w.blind_stride));
    }
};

inline TrainConfig desk_train_config() {
    TrainConfig c;
    c.lr_halve_every = 1000;
    c.total_iters = 5000;
    c.patch = 64;
    return c;
}

/// Desk blind stride is 4: the 64-pixel desk patch admits no stride-5
/// space-to-batch, and the supplementary stride study treats b=4 as
/// equivalent. The paper preset keeps b=5 with 240-pixel patches.
inline LossWeights desk_loss_weights() {
    LossWeights w;
    w.warmup_iters = 2000;
    w.blind_stride = 4;
    return w;
}

inline CbsnConfig desk_cbsn_config() {
    return CbsnConfig{};  // width 16, 2 modules per branch
}

/// Adam moments, one pair per parameter tensor.
template <typename T>
struct OptimizerStateT {
    std::vector<Tensor<T>> m, v;
    std::int64_t step = 0;
};

using OptimizerState = OptimizerStateT<float>;

template <typename T>
OptimizerStateT<T> make_optimizer_state(const CbsnParamsT<T>& params) {
    OptimizerStateT<T> s;
    for (const auto& [name, t] : params.tensors) {
        s.m.emplace_back(t.shape);
        s.v.emplace_back(t.shape);
    }
    return s;
}

/// One Adam update with bias correction. Empty gradients (parameters the
/// loss never touched) decay the moments and leave the step at the moment
/// estimate, matching the zero-gradient case.
template <typename T>
void adam_step(CbsnParamsT<T>& params, const std::vector<Tensor<T>>& grads, OptimizerStateT<T>& state, double lr,
               const TrainConfig& cfg) {
    if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state size mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.tensors.size(); ++pi) {
        Tensor<T>& theta = params.tensors[pi].second;
        const Tensor<T>& g = grads[pi];
        if (g.numel() != 0) require_same_shape(theta, g, "adam_step");
        Tensor<T>& m = state.m[pi];
        Tensor<T>& v = state.v[pi];
        for (std::int64_t i = 0; i < theta.numel(); ++i) {
            const double gi = g.numel() ? static_cast<double>(g.data[i]) : 0.0;
            const double mi = cfg.beta1 * static_cast<double>(m.data[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v.data[i]) + (1.0 - cfg.beta2) * gi * gi;
            m.data[i] = static_cast<T>(mi);
            v.data[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            theta.data[i] = static_cast<T>(static_cast<double>(theta.data[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

/// max(lr0 * 0.5^floor(iter/halve_every), lr_floor)
inline double lr_at(std::int64_t iter, const TrainConfig& cfg) {
    if (iter < 0) throw std::invalid_argument("lr_at: iter must be >= 0");
    const double halvings = static_cast<double>(iter / cfg.lr_halve_every);
    return std::max(cfg.lr0 * std::pow(0.5, halvings), cfg.lr_floor);
}

/// Training data is noisy-only by construction; nothing in the train path
/// accepts clean images.
struct NoisyDataset {
    std::vector<Tensor<float>> images;  // each [C,H,W]
};

namespace detail {

template <typename T>
Tensor<T> rotate90(const Tensor<T>& x, int quarter_turns) {
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    quarter_turns = ((quarter_turns % 4) + 4) % 4;
    if (quarter_turns == 0) return x;
    const std::int64_t Ho = quarter_turns % 2 == 0 ? H : W;
    const std::int64_t Wo = quarter_turns % 2 == 0 ? W : H;
    Tensor<T> y({C, Ho, Wo});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < Ho; ++i)
            for (std::int64_t j = 0; j < Wo; ++j) {
                std::int64_t si = 0, sj = 0;
                switch (quarter_turns) {
                    case 1: si = j, sj = W - 1 - i; break;
                    case 2: si = H - 1 - i, sj = W - 1 - j; break;
                    case 3: si = H - 1 - j, sj = i; break;
                }
                y.data[(c * Ho + i) * Wo + j] = x.data[(c * H + si) * W + sj];
            }
    return y;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& x) {
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor<T> y(x.shape);
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j) y.data[(c * H + i) * W + j] = x.data[(c * H + i) * W + (W - 1 - j)];
    return y;
}

}  // namespace detail

/// Uniform image choice, uniform crop, then an independent quarter-turn
/// count and horizontal-flip coin per patch.
inline Tensor<float> sample_batch(const NoisyDataset& data, const TrainConfig& cfg, Rng& rng) {
    if (data.images.empty()) throw std::invalid_argument("sample_batch: empty dataset");
    const std::int64_t C = data.images.front().dim(0);
    Tensor<float> batch({cfg.batch, C, cfg.patch, cfg.patch});
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
        const Tensor<float>& img = data.images[static_cast<std::size_t>(rng.uniform_int(
            static_cast<std::int64_t>(data.images.size())))];
        const std::int64_t H = img.dim(1), W = img.dim(2);
        if (H < cfg.patch || W < cfg.patch)
            throw std::invalid_argument("sample_batch: patch " + std::to_string(cfg.patch) +
                                        " larger than image " + std::to_string(H) + "x" + std::to_string(W));
        const std::int64_t i0 = rng.uniform_int(H - cfg.patch + 1);
        const std::int64_t j0 = rng.uniform_int(W - cfg.patch + 1);
        Tensor<float> crop({C, cfg.patch, cfg.patch});
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < cfg.patch; ++i)
                for (std::int64_t j = 0; j < cfg.patch; ++j)
                    crop.data[(c * cfg.patch + i) * cfg.patch + j] = img.data[(c * H + i0 + i) * W + j0 + j];
        crop = detail::rotate90(crop, static_cast<int>(rng.uniform_int(4)));
        if (rng.coin()) crop = detail::hflip(crop);
        std::copy(crop.data.begin(), crop.data.end(), batch.data.begin() + b * C * cfg.patch * cfg.patch);
    }
    return batch;
}

struct LogRow {
    std::int64_t iter = 0;
    double lr = 0, l_total = 0, l_blind = 0, l_self = 0, l_inv = 0, lambda_sch = 0;
};

struct TrainHooks {
    std::function<void(std::int64_t iter, const CbsnParams&)> on_checkpoint;
    std::function<void(const LogRow&)> on_log;
};

struct TrainResult {
    CbsnParams params;
    std::vector<LogRow> log;
};

/// The §-recipe loop: sample, normalize per patch, evaluate the scheduled
/// total loss, backpropagate, Adam-update. Fully deterministic for a fixed
/// seed.
inline TrainResult train(const NoisyDataset& data, const CbsnConfig& model_cfg, const TrainConfig& cfg,
                         const LossWeights& weights, const TrainHooks& hooks = {}) {
    cfg.validate(weights);
    weights.validate();
    if (data.images.empty()) throw std::invalid_argument("train: empty dataset");

    TrainResult result;
    result.params = build<float>(model_cfg, cfg.seed);
    OptimizerState opt = make_optimizer_state(result.params);

    Rng rng_batch = Rng(cfg.seed).split(1);
    Rng rng_loss = Rng(cfg.seed).split(2);

    for (std::int64_t iter = 0; iter < cfg.total_iters; ++iter) {
        Tensor<float> batch = sample_batch(data, cfg, rng_batch);
        // per-patch normalization
        const std::int64_t stride = batch.numel() / cfg.batch;
        for (std::int64_t b = 0; b < cfg.batch; ++b) {
            Tensor<float> patch({batch.dim(1), batch.dim(2), batch.dim(3)},
                                std::vector<float>(batch.data.begin() + b * stride, batch.data.begin() + (b + 1) * stride));
            auto [normed, stats] = normalize(patch);
            (void)stats;  // loss lives in the normalized domain
            std::copy(normed.data.begin(), normed.data.end(), batch.data.begin() + b * stride);
        }

        Tape<float> tape;
        tape.set_check_finite(cfg.debug_checks);
        BoundParams<float> bound = bind_params(tape, result.params);
        TotalLossParts<float> parts = l_total(tape, bound, batch, weights, iter, rng_loss);
        tape.backward(parts.total);

        std::vector<Tensor<float>> grads(bound.vars.size());
        for (std::size_t pi = 0; pi < bound.vars.size(); ++pi)
            if (tape.has_grad(bound.vars[pi])) grads[pi] = tape.grad(bound.vars[pi]);

        const double lr = lr_at(iter, cfg);
        adam_step(result.params, grads, opt, lr, cfg);

        if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0)
            hooks.on_checkpoint(iter + 1, result.params);

        if (iter % cfg.log_every == 0 || iter + 1 == cfg.total_iters) {
            LogRow row;
            row.iter = iter;
            row.lr = lr;
            row.l_total = parts.value_or_zero(tape, parts.total);
            row.l_blind = parts.value_or_zero(tape, parts.blind);
            row.l_self = parts.value_or_zero(tape, parts.self_term);
            row.l_inv = parts.value_or_zero(tape, parts.inv_term);
            row.lambda_sch = parts.lambda_sch;
            result.log.push_back(row);
            if (hooks.on_log) hooks.on_log(row);
        }
    }
    return result;
}

/// Single-pass inference: normalize, one non-blind forward, denormalize. No
/// downsampling happens at test time; inputs below the receptive-field
/// minimum are reflect-padded and cropped back.
inline Tensor<float> denoise(const CbsnParams& params, const Tensor<float>& x) {
    if (x.rank() != 3) throw std::invalid_argument("denoise: input must be [C,H,W]");
    const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::int64_t need = params.config.min_input();

    Tensor<float> padded = x;
    const std::int64_t Hp = std::max(H, need), Wp = std::max(W, need);
    if (Hp != H || Wp != W) {
        padded = Tensor<float>({C, Hp, Wp});
        auto reflect = [](std::int64_t i, std::int64_t n) {
            // mirror with edge duplication, folded into range
            while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
            return i;
        };
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < Hp; ++i)
                for (std::int64_t j = 0; j < Wp; ++j)
                    padded.data[(c * Hp + i) * Wp + j] = x.data[(c * H + reflect(i, H)) * W + reflect(j, W)];
    }

    auto [normed, stats] = normalize(padded);
    Tensor<float> batched({1, C, Hp, Wp}, std::move(normed.data));
    Tensor<float> out = cbsn_forward(params, batched, false);
    Tensor<float> den = denormalize(out, stats);

    Tensor<float> y({C, H, W});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j) y.data[(c * H + i) * W + j] = den.data[(c * Hp + i) * Wp + j];
    return y;
}

}  // namespace cbsn
