#include <doctest.h>

#include "cbsn/gradcheck.hpp"
#include "cbsn/losses.hpp"
#include "cbsn/trainkit.hpp"
#include "test_util.hpp"

using namespace cbsn;
using testutil::random_tensor;

namespace {

CbsnConfig tiny_config() {
    CbsnConfig cfg;
    cfg.base_width = 4;
    cfg.modules_per_branch = 1;
    cfg.branch_specs = {{3, 2}};
    cfg.tail_depth = 2;
    cfg.in_channels = 1;
    cfg.out_channels = 1;
    return cfg;
}

template <typename T>
double scalar(const Tape<T>& t, Var v) {
    return static_cast<double>(t.value(v).data[0]);
}

}  // namespace

TEST_CASE("l_self examples") {
    Tape<double> t;
    Rng rng(1);
    Tensor<double> x = random_tensor<double>({1, 1, 4, 4}, rng);
    Var xv = t.leaf(x, false);
    CHECK(scalar(t, l_self(t, xv, xv)) == 0.0);

    Tensor<double> plus1 = x;
    for (auto& v : plus1.data) v += 1.0;
    CHECK(scalar(t, l_self(t, t.leaf(plus1, false), xv)) == doctest::Approx(1.0));

    Var a = t.leaf(Tensor<double>({2}, {0.0, 3.0}), false);
    Var b = t.leaf(Tensor<double>({2}, {1.0, 1.0}), false);
    CHECK(scalar(t, l_self(t, a, b)) == doctest::Approx(1.5));
}

TEST_CASE("l_inv_rs: seeded determinism and map sensitivity") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 5);
    Rng data_rng(2);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);

    auto eval = [&](std::uint64_t seed) {
        Tape<double> t;
        BoundParams<double> bp = bind_params(t, params);
        Rng r(seed);
        return scalar(t, l_inv_rs(t, bp, x, 2, r));
    };
    CHECK(eval(7) == eval(7));       // same seed, same value
    CHECK(eval(7) != eval(8));       // map randomness moves the value
}

TEST_CASE("l_inv_rs value recomputed from its pieces with a replayed map") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 6);
    Rng data_rng(3);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);

    Tape<double> t;
    BoundParams<double> bp = bind_params(t, params);
    Rng r(11);
    const double loss = scalar(t, l_inv_rs(t, bp, x, 2, r));

    Rng r2(11);
    IndexMap map = draw_index_map(16, 16, 2, r2);  // the only draw l_inv_rs makes
    Tensor<double> fx = cbsn_forward(params, x, false);
    Tensor<double> g = subsample_with_map(fx, map);
    Tensor<double> h = cbsn_forward(params, subsample_with_map(x, map), true);
    double manual = 0;
    for (std::int64_t i = 0; i < g.numel(); ++i) manual += std::abs(g.data[i] - h.data[i]);
    manual /= static_cast<double>(g.numel());
    CHECK(loss == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("l_inv_rs gradient matches finite differences with the blind branch frozen") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 7);
    Rng data_rng(4);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);
    const std::uint64_t map_seed = 21;

    Tape<double> tape;
    BoundParams<double> bp = bind_params(tape, params);
    Rng r(map_seed);
    Var loss = l_inv_rs(tape, bp, x, 2, r);
    tape.backward(loss);

    // oracle: freeze h at its current value, vary one parameter tensor

    Rng rm(map_seed);
    IndexMap map = draw_index_map(16, 16, 2, rm);
    Tensor<double> h = cbsn_forward(params, subsample_with_map(x, map), true);

    for (std::size_t pi = 0; pi < params.tensors.size(); ++pi) {
        const auto& name = params.tensors[pi].first;
        auto loss_at = [&](const Tensor<double>& p) {
            CbsnParamsT<double> mod = params;
            mod.tensors[pi].second = p;
            Tensor<double> fx = cbsn_forward(mod, x, false);
            Tensor<double> g = subsample_with_map(fx, map);
            double acc = 0;
            for (std::int64_t i = 0; i < g.numel(); ++i) acc += std::abs(g.data[i] - h.data[i]);
            return acc / static_cast<double>(g.numel());
        };
        Tensor<double> fd = finite_diff_grad(loss_at, params.tensors[pi].second, 1e-6);
        Tensor<double> analytic = tape.has_grad(bp.vars[pi]) ? tape.grad(bp.vars[pi])
                                                             : Tensor<double>(params.tensors[pi].second.shape);
        INFO("parameter ", name);
        CHECK(max_rel_error(analytic, fd) < 1e-4);
    }
}

TEST_CASE("l_inv_rms: RMS identity against the closed form") {
    // sqrt(s^2/m)*||d||_2 with n = m/s^2 subpixels equals the RMS of d; for
    // d constant at +-eps the closed form is sqrt(s^2/m * n * eps^2) = eps.
    Tape<double> t;
    const double eps = 0.37;
    Tensor<double> g({1, 1, 2, 2}, {eps, -eps, eps, -eps});
    Var gv = t.leaf(g, false);
    Var hv = t.leaf(Tensor<double>({1, 1, 2, 2}), false);
    Var rms = detail::sqrt_scalar(t, mean_sq(t, gv, hv));
    CHECK(scalar(t, rms) == doctest::Approx(eps).epsilon(1e-12));

    // and the full loss agrees with a manual replay
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 8);
    Rng data_rng(5);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);
    Tape<double> t2;
    BoundParams<double> bp = bind_params(t2, params);
    Rng r(31);
    const double loss = scalar(t2, l_inv_rms(t2, bp, x, 2, r));

    Rng r2(31);
    IndexMap map = draw_index_map(16, 16, 2, r2);
    Tensor<double> fx = cbsn_forward(params, x, false);
    Tensor<double> gg = subsample_with_map(fx, map);
    Tensor<double> hh = cbsn_forward(params, subsample_with_map(x, map), true);
    double ss = 0;
    for (std::int64_t i = 0; i < gg.numel(); ++i) ss += (gg.data[i] - hh.data[i]) * (gg.data[i] - hh.data[i]);
    const std::int64_t m = x.numel();
    const double closed = std::sqrt(4.0 / static_cast<double>(m)) * std::sqrt(ss);
    CHECK(loss == doctest::Approx(closed).epsilon(1e-10));
}

TEST_CASE("l_cbsn: lambda 0 reduces to l_self; parts recombine within 1e-6") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 9);
    Rng data_rng(6);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);

    LossWeights w0;
    w0.lambda_inv = 0.0;
    Tape<double> t;
    BoundParams<double> bp = bind_params(t, params);
    Rng r(41);
    CbsnLossParts<double> parts = l_cbsn(t, bp, x, w0, r);
    CHECK(scalar(t, parts.total) == doctest::Approx(scalar(t, parts.self_term)).epsilon(1e-15));

    LossWeights w2;  // default lambda_inv = 2
    Tape<double> t2;
    BoundParams<double> bp2 = bind_params(t2, params);
    Rng r2(42);
    CbsnLossParts<double> p2 = l_cbsn(t2, bp2, x, w2, r2);
    CHECK(scalar(t2, p2.total) ==
          doctest::Approx(scalar(t2, p2.self_term) + 2.0 * scalar(t2, p2.inv_term)).epsilon(1e-6));
}

TEST_CASE("l_blind: stride 1 with S2B degenerates to ||f_M(x) - x||") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 10);
    Rng data_rng(7);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);

    Tape<double> t;
    BoundParams<double> bp = bind_params(t, params);
    Rng r(51);
    const double loss = scalar(t, l_blind(t, bp, x, 1, Downsampler::S2B, r));

    Tensor<double> fm = cbsn_forward(params, x, true);
    double manual = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) manual += std::abs(fm.data[i] - x.data[i]);
    manual /= static_cast<double>(x.numel());
    CHECK(loss == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("l_blind gradient matches finite differences (all downsamplers)") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 11);
    Rng data_rng(8);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);

    for (Downsampler d : {Downsampler::S2B, Downsampler::PD, Downsampler::RS}) {
        const std::uint64_t seed = 61;
        Tape<double> tape;
        BoundParams<double> bp = bind_params(tape, params);
        Rng r(seed);
        Var loss = l_blind(tape, bp, x, 2, d, r);
        tape.backward(loss);

        for (std::size_t pi = 0; pi < params.tensors.size(); ++pi) {
            auto loss_at = [&](const Tensor<double>& p) {
                CbsnParamsT<double> mod = params;
                mod.tensors[pi].second = p;
                Tape<double> t2;
                BoundParams<double> bp2 = bind_params(t2, mod);
                Rng r2(seed);
                return scalar(t2, l_blind(t2, bp2, x, 2, d, r2));
            };
            Tensor<double> fd = finite_diff_grad(loss_at, params.tensors[pi].second, 1e-6);
            Tensor<double> analytic = tape.has_grad(bp.vars[pi]) ? tape.grad(bp.vars[pi])
                                                                 : Tensor<double>(params.tensors[pi].second.shape);
            CHECK(max_rel_error(analytic, fd) < 1e-4);
        }
    }
}

TEST_CASE("lambda_schedule anchors and monotonicity") {
    CHECK(lambda_schedule(0, 2000) == 0.0);
    CHECK(lambda_schedule(2000, 2000) == 1.0);
    CHECK(lambda_schedule(1000, 2000) == 0.5);
    CHECK(lambda_schedule(5000, 2000) == 1.0);
    double prev = -1;
    for (std::int64_t it = 0; it <= 4000; it += 100) {
        const double v = lambda_schedule(it, 2000);
        CHECK(v >= prev);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        prev = v;
    }
    CHECK_THROWS_AS(lambda_schedule(-1, 2000), std::invalid_argument);
}

TEST_CASE("l_total: warm-up at iter 0 is bitwise the blind loss") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 12);
    Rng data_rng(9);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);
    LossWeights w = desk_loss_weights();
    w.blind_stride = 2;  // keep the s2b subimages above the receptive-field minimum

    Tape<double> t;
    BoundParams<double> bp = bind_params(t, params);
    Rng r(71);
    TotalLossParts<double> parts = l_total(t, bp, x, w, 0, r);
    CHECK(parts.lambda_sch == 0.0);
    CHECK_FALSE(parts.self_term.valid());

    Tape<double> t2;
    BoundParams<double> bp2 = bind_params(t2, params);
    Rng r2(71);
    const double blind_only = scalar(t2, l_blind(t2, bp2, x, w.blind_stride, w.blind_downsampler, r2));
    CHECK(scalar(t, parts.total) == blind_only);  // bitwise
}

TEST_CASE("l_total: parts recombine; Table-4 regimes select the right terms") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 13);
    Rng data_rng(10);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);
    LossWeights w = desk_loss_weights();
    w.blind_stride = 2;

    // mid-warm-up: manual recombination within 1e-6
    Tape<double> t;
    BoundParams<double> bp = bind_params(t, params);
    Rng r(81);
    TotalLossParts<double> parts = l_total(t, bp, x, w, 500, r);
    CHECK(parts.lambda_sch == doctest::Approx(0.25));
    const double manual = scalar(t, parts.blind) +
                          parts.lambda_sch * (scalar(t, parts.self_term) + w.lambda_inv * scalar(t, parts.inv_term));
    CHECK(scalar(t, parts.total) == doctest::Approx(manual).epsilon(1e-6));

    // zero: pure blind training
    LossWeights wz = w;
    wz.schedule = ScheduleMode::Zero;
    Tape<double> tz;
    BoundParams<double> bpz = bind_params(tz, params);
    Rng rz(81);
    TotalLossParts<double> pz = l_total(tz, bpz, x, wz, 3000, rz);
    CHECK(pz.lambda_sch == 0.0);
    CHECK_FALSE(pz.self_term.valid());
    CHECK(pz.blind.valid());

    // inf: blind loss dropped
    LossWeights wi = w;
    wi.schedule = ScheduleMode::Inf;
    Tape<double> ti;
    BoundParams<double> bpi = bind_params(ti, params);
    Rng ri(81);
    TotalLossParts<double> pinf = l_total(ti, bpi, x, wi, 3000, ri);
    CHECK_FALSE(pinf.blind.valid());
    CHECK(pinf.self_term.valid());

    // all losses non-negative
    for (double v : {scalar(t, parts.total), scalar(tz, pz.total), scalar(ti, pinf.total)}) CHECK(v >= 0.0);
}

TEST_CASE("l_n2same: empty mask reduces to the mean-square self term") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 14);
    Rng data_rng(11);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);

    Tape<double> t;
    BoundParams<double> bp = bind_params(t, params);
    Rng r(91);
    const double loss = scalar(t, l_n2same(t, bp, x, 2.0, r, 0.0));

    Tensor<double> fx = cbsn_forward(params, x, false);
    double manual = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) manual += (fx.data[i] - x.data[i]) * (fx.data[i] - x.data[i]);
    manual /= static_cast<double>(x.numel());
    CHECK(loss == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("l_n2same: constant network zeroes the invariance term") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 15);
    for (auto& [name, tensor] : params.tensors)
        for (auto& v : tensor.data) v = 0.0;  // f == 0 everywhere
    Rng data_rng(12);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);

    Tape<double> t;
    BoundParams<double> bp = bind_params(t, params);
    Rng r(101);
    const double loss = scalar(t, l_n2same(t, bp, x, 2.0, r, 0.25));
    double manual = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) manual += x.data[i] * x.data[i];
    manual /= static_cast<double>(x.numel());
    CHECK(loss == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("l_n2same gradient matches finite differences") {
    auto cfg = tiny_config();
    CbsnParamsT<double> params = build<double>(cfg, 16);
    Rng data_rng(13);
    Tensor<double> x = random_tensor<double>({1, 1, 16, 16}, data_rng);
    const std::uint64_t seed = 111;

    Tape<double> tape;
    BoundParams<double> bp = bind_params(tape, params);
    Rng r(seed);
    Var loss = l_n2same(tape, bp, x, 2.0, r, 0.25);
    tape.backward(loss);

    for (std::size_t pi = 0; pi < params.tensors.size(); pi += 3) {  // a representative subset
        auto loss_at = [&](const Tensor<double>& p) {
            CbsnParamsT<double> mod = params;
            mod.tensors[pi].second = p;
            Tape<double> t2;
            BoundParams<double> bp2 = bind_params(t2, mod);
            Rng r2(seed);
            return scalar(t2, l_n2same(t2, bp2, x, 2.0, r2, 0.25));
        };
        Tensor<double> fd = finite_diff_grad(loss_at, params.tensors[pi].second, 1e-6);
        Tensor<double> analytic = tape.has_grad(bp.vars[pi]) ? tape.grad(bp.vars[pi])
                                                             : Tensor<double>(params.tensors[pi].second.shape);
        CHECK(max_rel_error(analytic, fd) < 1e-4);
    }
}

TEST_CASE("check_proposition: zero network gives near-zero slack that still holds") {
    Rng rng(1000);
    PropositionReport rep = check_proposition(8, 0.25, 2000, rng, 2, 0.0);
    CHECK(rep.holds);
    CHECK(std::abs(rep.slack) < 6.0 * rep.stderr_total + 1e-9);
}

TEST_CASE("check_proposition: sigma 0 still satisfies the bound") {
    Rng rng(1001);
    PropositionReport rep = check_proposition(8, 0.0, 500, rng);
    CHECK(rep.holds);
    CHECK(rep.slack >= 0.0);
}

TEST_CASE("check_proposition: random linear networks hold across seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(2000 + seed);
        PropositionReport rep = check_proposition(8, 0.25, 1000, rng);
        CHECK(rep.holds);
    }
}

TEST_CASE("check_proposition rejects meaningless sample counts") {
    Rng rng(3);
    CHECK_THROWS_AS(check_proposition(8, 0.25, 50, rng), std::invalid_argument);
}
