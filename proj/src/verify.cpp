#include "cbsn/verify.hpp"

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "cbsn/checkpoint.hpp"
#include "cbsn/config.hpp"
#include "cbsn/gradcheck.hpp"
#include "cbsn/metrics.hpp"
#include "cbsn/raster.hpp"

namespace cbsn {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

CheckResult check_mask_values() {
    const bool ok = conditional_mask<float>(3, true).data == std::vector<float>{1, 1, 1, 1, 0, 1, 1, 1, 1} &&
                    conditional_mask<float>(3, false).data == std::vector<float>(9, 1.f) &&
                    conditional_mask<float>(1, true).data == std::vector<float>{0.f};
    return {"conditional_mask_values", ok, ok ? "k=3 and k=1 masks as defined" : "mask mismatch"};
}

CheckResult check_blind_spot(std::uint64_t seed) {
    double worst = 0;
    double frac = 1;
    for (std::uint64_t s = 0; s < 2; ++s) {
        CbsnParams p = build(CbsnConfig{}, seed + s);
        auto fwd = [&](const Tensor<float>& x, bool blind) { return cbsn_forward(p, x, blind); };
        Rng rng(seed + 10 * s);
        BlindSpotReport rep = blind_spot_test<float>(fwd, 3, 12, 12, 30, rng);
        worst = std::max(worst, rep.blind_max_delta);
        frac = std::min(frac, rep.nonblind_delta_frac);
    }
    const bool ok = worst == 0.0 && frac >= 0.99;
    return {"blind_spot_exactness", ok, "blind_max_delta=" + fmt(worst) + " nonblind_frac=" + fmt(frac)};
}

CheckResult check_gradients(std::uint64_t seed) {
    // L_total through every op, 64-bit, against central differences. The
    // finite-difference oracle freezes the stop-gradient branch at its
    // current value, which is exactly what the tape gradient must equal.
    CbsnConfig cfg;
    cfg.base_width = 4;
    cfg.modules_per_branch = 1;
    cfg.branch_specs = {{3, 2}};
    cfg.tail_depth = 2;
    cfg.in_channels = 1;
    cfg.out_channels = 1;
    CbsnParamsT<double> params = build<double>(cfg, seed);
    Rng drng(seed + 1);
    Tensor<double> x({1, 1, 16, 16});
    for (auto& v : x.data) v = drng.normal();
    LossWeights w;
    w.blind_stride = 2;
    w.warmup_iters = 10;
    const std::int64_t iter = 5;
    const double lambda_sch = lambda_schedule(iter, w.warmup_iters);

    Tape<double> tape;
    BoundParams<double> bp = bind_params(tape, params);
    Rng r(seed + 2);
    TotalLossParts<double> parts = l_total(tape, bp, x, w, iter, r);
    tape.backward(parts.total);

    // replay the single rng draw l_total makes (the invariance map) and
    // freeze the blind branch of the invariance loss
    Rng r2(seed + 2);
    IndexMap map = draw_index_map(x.dim(2), x.dim(3), w.rs_stride, r2);
    const Tensor<double> sub_x = subsample_with_map(x, map);
    const Tensor<double> h0 = cbsn_forward(params, sub_x, true);

    auto mean_abs_val = [](const Tensor<double>& a, const Tensor<double>& b) {
        double acc = 0;
        for (std::int64_t i = 0; i < a.numel(); ++i) acc += std::abs(a.data[i] - b.data[i]);
        return acc / static_cast<double>(a.numel());
    };
    auto frozen_total = [&](const CbsnParamsT<double>& mod) {
        // L_blind trains through f_M, so it is differentiated as-is
        Tensor<double> blind_in = s2b(x, w.blind_stride);
        Tensor<double> blind_out = b2s(cbsn_forward(mod, blind_in, true), w.blind_stride);
        const double lb = mean_abs_val(blind_out, x);
        Tensor<double> fx = cbsn_forward(mod, x, false);
        const double ls = mean_abs_val(fx, x);
        const double li = mean_abs_val(subsample_with_map(fx, map), h0);
        return lb + lambda_sch * (ls + w.lambda_inv * li);
    };

    double worst = 0;
    for (std::size_t pi = 0; pi < params.tensors.size(); ++pi) {
        auto loss_at = [&](const Tensor<double>& p) {
            CbsnParamsT<double> mod = params;
            mod.tensors[pi].second = p;
            return frozen_total(mod);
        };
        Tensor<double> fd = finite_diff_grad(loss_at, params.tensors[pi].second, 1e-6);
        Tensor<double> analytic =
            tape.has_grad(bp.vars[pi]) ? tape.grad(bp.vars[pi]) : Tensor<double>(params.tensors[pi].second.shape);
        worst = std::max(worst, max_rel_error(analytic, fd));
    }
    const bool ok = worst < 1e-4;
    return {"gradient_fidelity", ok, "max_rel_err=" + fmt(worst)};
}

CheckResult check_roundtrips(std::uint64_t seed) {
    Rng rng(seed);
    bool ok = true;
    for (int trial = 0; trial < 5 && ok; ++trial) {
        const std::int64_t s = 2 + rng.uniform_int(3);
        const std::int64_t h = s * (2 + rng.uniform_int(4)), w = s * (2 + rng.uniform_int(4));
        Tensor<float> x({1 + rng.uniform_int(2), 1 + rng.uniform_int(3), h, w});
        for (auto& v : x.data) v = static_cast<float>(rng.normal());
        ok = ok && pd_up(pd_down(x, s), s).data == x.data;
        ok = ok && b2s(s2b(x, s), s).data == x.data;
    }
    return {"resampler_roundtrips", ok, ok ? "pd and s2b invert bitwise" : "round-trip mismatch"};
}

CheckResult check_rs_uniformity(std::uint64_t seed) {
    Rng rng(seed);
    const std::int64_t draws = 10000;
    std::vector<std::int64_t> counts(4, 0);
    for (std::int64_t d = 0; d < draws; ++d) {
        IndexMap m = draw_index_map(4, 4, 2, rng);
        counts[static_cast<std::size_t>(m.dy[0] * 2 + m.dx[0])] += 1;
    }
    double worst = 0;
    for (auto c : counts) worst = std::max(worst, std::abs(static_cast<double>(c) / draws - 0.25));
    const bool ok = worst <= 0.02;
    return {"rs_offset_uniformity", ok, "max_freq_dev=" + fmt(worst)};
}

CheckResult check_decorrelation(std::uint64_t seed) {
    NoiseSpec spec;
    spec.kind = NoiseKind::CorrelatedGaussian;
    spec.sigma = 0.1;
    int wins = 0;
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(seed + static_cast<std::uint64_t>(trial));
        Tensor<float> zero({1, 1, 64, 64});
        Tensor<float> noise = add_noise(zero, spec, rng);
        auto raw = autocorrelation(noise, {{0, 1}});
        auto [sub, map] = random_subsample(noise, 2, rng);
        auto subbed = autocorrelation(sub, {{0, 1}});
        wins += std::abs(subbed[0].r) < std::abs(raw[0].r);
    }
    const bool ok = wins >= 9;
    return {"rs_decorrelation", ok, std::to_string(wins) + "/10 trials weakened"};
}

CheckResult check_schedule_anchors() {
    TrainConfig cfg;
    bool ok = lambda_schedule(0, 200000) == 0.0 && lambda_schedule(200000, 200000) == 1.0 &&
              lambda_schedule(100000, 200000) == 0.5;
    ok = ok && lr_at(0, cfg) == 1e-4 && lr_at(300000, cfg) == 2e-5;

    CbsnParamsT<double> p;
    p.tensors.emplace_back("theta", Tensor<double>({1}, {1.0}));
    OptimizerStateT<double> s = make_optimizer_state(p);
    std::vector<Tensor<double>> grads;
    grads.emplace_back(Shape{1}, std::vector<double>{2.0});
    adam_step(p, grads, s, 0.1, cfg);
    const double expected = 1.0 - 0.1 * 2.0 / (2.0 + cfg.eps);
    ok = ok && std::abs(p.tensors[0].second.data[0] - expected) < 1e-12;
    return {"schedule_and_adam_anchors", ok, ok ? "lambda_sch, lr and Adam first step exact" : "anchor mismatch"};
}

CheckResult check_normalization(std::uint64_t seed) {
    Rng rng(seed);
    Tensor<float> img = gen_clean(CleanKind::BandLimited, 32, 32, 3, rng);
    auto [n, stats] = normalize(img);
    Tensor<float> rt = denormalize(n, stats);
    double worst = 0;
    for (std::int64_t i = 0; i < img.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(rt.data[i]) - img.data[i]));
    Tensor<float> flat = Tensor<float>::full({3, 8, 8}, 0.4f);
    auto [fn, fstats] = normalize(flat);
    bool floor_ok = fstats.std == 1.0 / std::sqrt(192.0);
    for (float v : fn.data) floor_ok = floor_ok && v == 0.f;
    const bool ok = worst < 1e-6 && floor_ok;
    return {"normalization_roundtrip", ok, "max_err=" + fmt(worst)};
}

CheckResult check_file_roundtrips(std::uint64_t seed) {
    namespace fs = std::filesystem;
    Rng rng(seed);
    const std::string rpath = (fs::temp_directory_path() / "cbsn_verify.cbr").string();
    Tensor<float> img({3, 6, 7});
    for (auto& v : img.data) v = static_cast<float>(rng.normal());
    write_raster(rpath, img);
    Tensor<float> rimg = read_raster(rpath);
    bool ok = rimg.data == img.data && fs::file_size(rpath) == 16 + 4 * img.data.size();
    fs::remove(rpath);

    CbsnConfig small;
    small.base_width = 4;
    small.modules_per_branch = 1;
    CbsnParams params = build(small, seed);
    const std::string cpath = (fs::temp_directory_path() / "cbsn_verify.cbsn").string();
    save_checkpoint(cpath, params);
    CbsnParams loaded = load_checkpoint(cpath);
    fs::remove(cpath);
    ok = ok && loaded.tensors.size() == params.tensors.size();
    for (std::size_t i = 0; ok && i < params.tensors.size(); ++i)
        ok = loaded.tensors[i].second.data == params.tensors[i].second.data;

    ExperimentConfig cfg;
    cfg.seed = seed;
    const std::string ser = serialize_config(cfg);
    ok = ok && serialize_config(parse_config(ser)) == ser;
    return {"file_format_roundtrips", ok, ok ? "raster, checkpoint and config round-trip" : "round-trip mismatch"};
}

CheckResult check_stop_gradient(std::uint64_t seed) {
    Rng rng(seed);
    Tape<double> t;
    Tensor<double> x({2, 1, 4, 4});
    for (auto& v : x.data) v = rng.normal();
    Var theta = t.leaf(x, true);
    Var frozen = stop_gradient(t, theta);
    bool ok = t.value(frozen).data == x.data;
    Var loss = mean_sq(t, frozen, t.leaf(Tensor<double>(x.shape), false));
    t.backward(loss);
    ok = ok && !t.has_grad(theta);
    return {"stop_gradient_exactness", ok, ok ? "forward bitwise, backward cut" : "stop-gradient leak"};
}

CheckResult check_proposition_mc(std::uint64_t seed) {
    bool ok = true;
    double worst_slack = 1e300;
    for (std::uint64_t net = 0; net < 10 && ok; ++net) {
        for (double sigma : {0.1, 0.25}) {
            Rng rng(seed + net * 7919);
            PropositionReport rep = check_proposition(8, sigma, 1000, rng);
            ok = ok && rep.holds;
            worst_slack = std::min(worst_slack, rep.slack / std::max(rep.stderr_total, 1e-12));
        }
    }
    return {"proposition_upper_bound", ok, "min slack/stderr=" + fmt(worst_slack)};
}

CheckResult check_toy_training(std::uint64_t seed) {
    NoisyDataset data;
    Rng rng(seed);
    NoiseSpec spec;
    spec.kind = NoiseKind::CorrelatedGaussian;
    spec.sigma = 0.1;
    for (int i = 0; i < 6; ++i)
        data.images.push_back(add_noise(gen_clean(CleanKind::BandLimited, 32, 32, 3, rng), spec, rng));

    CbsnConfig model;
    model.base_width = 8;
    model.modules_per_branch = 1;
    TrainConfig cfg = desk_train_config();
    cfg.seed = seed;
    cfg.total_iters = 150;
    cfg.patch = 16;
    cfg.batch = 2;
    cfg.log_every = 10;
    cfg.checkpoint_every = 0;
    cfg.debug_checks = true;  // finite-value invariant active throughout
    LossWeights w = desk_loss_weights();
    w.blind_stride = 2;
    w.warmup_iters = 60;

    TrainResult r = train(data, model, cfg, w);
    // compare the blind term: l_total is not stationary while the warm-up
    // ramps lambda_sch
    double first = 0, last = 0;
    const std::size_t k = 3;
    for (std::size_t i = 0; i < k; ++i) first += r.log[i].l_blind;
    for (std::size_t i = r.log.size() - k; i < r.log.size(); ++i) last += r.log[i].l_blind;
    bool finite = true;
    for (const auto& [name, tensor] : r.params.tensors) finite = finite && tensor.all_finite();
    const bool ok = finite && last < first;
    return {"toy_training_smoke", ok, "blind loss " + fmt(first / k) + " -> " + fmt(last / k)};
}

}  // namespace

std::vector<CheckResult> verify_quick(std::uint64_t seed) {
    std::vector<CheckResult> out;
    out.push_back(check_mask_values());
    out.push_back(check_blind_spot(seed));
    out.push_back(check_stop_gradient(seed));
    out.push_back(check_gradients(seed));
    out.push_back(check_roundtrips(seed));
    out.push_back(check_rs_uniformity(seed));
    out.push_back(check_decorrelation(seed));
    out.push_back(check_schedule_anchors());
    out.push_back(check_normalization(seed));
    out.push_back(check_file_roundtrips(seed));
    return out;
}

std::vector<CheckResult> verify_full(std::uint64_t seed) {
    std::vector<CheckResult> out = verify_quick(seed);
    out.push_back(check_proposition_mc(seed));
    out.push_back(check_toy_training(seed));
    return out;
}

}  // namespace cbsn
