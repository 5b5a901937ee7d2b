#include <doctest.h>

#include "cbsn/gradcheck.hpp"
#include "cbsn/noisegen.hpp"
#include "cbsn/resample.hpp"
#include "test_util.hpp"

using namespace cbsn;
using testutil::random_tensor;

namespace {

Tensor<double> ramp4x4() {
    Tensor<double> x({1, 1, 4, 4});
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 4; ++j) x.at4(0, 0, i, j) = static_cast<double>(4 * i + j);
    return x;
}

}  // namespace

TEST_CASE("random_subsample: stride 1 is the identity with an all-zero map") {
    Rng rng(3);
    Tensor<double> x = random_tensor<double>({2, 3, 4, 4}, rng);
    auto [y, map] = random_subsample(x, 1, rng);
    CHECK(y.data == x.data);
    for (auto v : map.dy) CHECK(v == 0);
    for (auto v : map.dx) CHECK(v == 0);
}

TEST_CASE("random_subsample: constant image stays constant") {
    Rng rng(4);
    Tensor<double> x = Tensor<double>::full({1, 2, 6, 6}, 0.7);
    auto [y, map] = random_subsample(x, 2, rng);
    CHECK(y.shape == Shape{1, 2, 3, 3});
    for (double v : y.data) CHECK(v == 0.7);
}

TEST_CASE("subsample_with_map: hand-computed 4x4 example") {
    Tensor<double> x = ramp4x4();
    IndexMap m;
    m.stride = 2;
    m.gh = m.gw = 2;
    m.dy = {0, 1, 0, 1};
    m.dx = {0, 1, 1, 0};
    Tensor<double> y = subsample_with_map(x, m);
    CHECK(y.data == std::vector<double>{0, 7, 9, 14});
}

TEST_CASE("subsample_with_map matches random_subsample and rejects bad dims") {
    Rng rng(5);
    Tensor<double> x = random_tensor<double>({2, 3, 8, 8}, rng);
    auto [y, map] = random_subsample(x, 2, rng);
    CHECK(subsample_with_map(x, map).data == y.data);

    Tensor<double> small = random_tensor<double>({2, 3, 6, 6}, rng);
    CHECK_THROWS_AS(subsample_with_map(small, map), std::invalid_argument);
    CHECK_THROWS_AS(random_subsample(small, 4, rng), std::invalid_argument);
}

TEST_CASE("subsample gather adjoint: ones at selected positions, zeros elsewhere") {
    Rng rng(6);
    Tensor<double> x = random_tensor<double>({1, 2, 4, 4}, rng);
    IndexMap map = draw_index_map(4, 4, 2, rng);

    // sum-like reduction: mean_abs against a constant far below every value
    // has gradient 1/n at each selected position and 0 elsewhere
    Tape<double> t;
    Var xv = t.leaf(x, true);
    Var sub = subsample_with_map(t, xv, map);
    Var floor_v = t.leaf(Tensor<double>::full({1, 2, 2, 2}, -100.0), false);
    Var loss = mean_abs(t, sub, floor_v);
    t.backward(loss);
    const Tensor<double>& g = t.grad(xv);
    std::int64_t selected = 0;
    for (double v : g.data) {
        CHECK((v == 0.0 || v == 0.125));  // 1/n with n = 8 gathered values
        selected += v != 0.0;
    }
    CHECK(selected == 8);  // one per cell per channel

    // and the full finite-difference check
    auto f = [&](const Tensor<double>& p) {
        Tape<double> t2;
        Var pv = t2.leaf(p, false);
        Var s = subsample_with_map(t2, pv, map);
        return t2.value(mean_sq(t2, s, t2.leaf(Tensor<double>({1, 2, 2, 2}), false))).data[0];
    };
    Tape<double> t3;
    Var xv3 = t3.leaf(x, true);
    Var sub3 = subsample_with_map(t3, xv3, map);
    Var loss3 = mean_sq(t3, sub3, t3.leaf(Tensor<double>({1, 2, 2, 2}), false));
    t3.backward(loss3);
    CHECK(max_rel_error(t3.grad(xv3), finite_diff_grad(f, x, 1e-5)) < 1e-4);
}

TEST_CASE("pd: round-trip identity and phase layout") {
    Rng rng(7);
    for (auto [shape, s] : {std::pair{Shape{2, 3, 8, 8}, std::int64_t{2}}, {Shape{1, 1, 12, 6}, std::int64_t{3}},
                            {Shape{1, 2, 10, 10}, std::int64_t{5}}}) {
        Tensor<double> x = random_tensor<double>(shape, rng);
        CHECK(pd_up(pd_down(x, s), s).data == x.data);
    }
    Tensor<double> x = random_tensor<double>({1, 1, 4, 4}, rng);
    CHECK(pd_down(x, 1).data == x.data);

    Tensor<double> ramp = ramp4x4();
    Tensor<double> mosaic = pd_down(ramp, 2);
    // top-left block is phase (0,0)
    CHECK(mosaic.at4(0, 0, 0, 0) == 0.0);
    CHECK(mosaic.at4(0, 0, 0, 1) == 2.0);
    CHECK(mosaic.at4(0, 0, 1, 0) == 8.0);
    CHECK(mosaic.at4(0, 0, 1, 1) == 10.0);
    CHECK_THROWS_AS(pd_down(ramp, 3), std::invalid_argument);
}

TEST_CASE("s2b/b2s: round-trip identity and phase placement") {
    Rng rng(8);
    for (auto [shape, s] : {std::pair{Shape{2, 3, 8, 8}, std::int64_t{2}}, {Shape{3, 1, 15, 10}, std::int64_t{5}}}) {
        Tensor<double> x = random_tensor<double>(shape, rng);
        CHECK(b2s(s2b(x, s), s).data == x.data);
    }
    Tensor<double> ramp = ramp4x4();
    CHECK(s2b(ramp, 1).data == ramp.data);

    Tensor<double> stacked = s2b(ramp, 2);
    CHECK(stacked.shape == Shape{4, 1, 2, 2});
    // batch element for phase (0,1)
    CHECK(stacked.at4(1, 0, 0, 0) == 1.0);
    CHECK(stacked.at4(1, 0, 0, 1) == 3.0);
    CHECK(stacked.at4(1, 0, 1, 0) == 9.0);
    CHECK(stacked.at4(1, 0, 1, 1) == 11.0);
    CHECK_THROWS_AS(s2b(ramp, 3), std::invalid_argument);
}

TEST_CASE("tape rearrangement ops differentiate as permutations") {
    Rng rng(9);
    Tensor<double> x0 = random_tensor<double>({1, 2, 6, 6}, rng);
    Tensor<double> target = random_tensor<double>({4, 2, 3, 3}, rng);

    auto loss_at = [&](const Tensor<double>& p) {
        Tape<double> t;
        Var pv = t.leaf(p, false);
        Var y = s2b(t, pv, 2);
        return t.value(mean_sq(t, y, t.leaf(target, false))).data[0];
    };
    Tape<double> t;
    Var xv = t.leaf(x0, true);
    Var y = s2b(t, xv, 2);
    Var loss = mean_sq(t, y, t.leaf(target, false));
    t.backward(loss);
    CHECK(max_rel_error(t.grad(xv), finite_diff_grad(loss_at, x0, 1e-5)) < 1e-4);

    Tensor<double> target2 = random_tensor<double>({1, 2, 6, 6}, rng);
    auto loss_pd = [&](const Tensor<double>& p) {
        Tape<double> t2;
        Var pv = t2.leaf(p, false);
        Var u = pd_up(t2, pd_down(t2, pv, 3), 3);
        return t2.value(mean_sq(t2, u, t2.leaf(target2, false))).data[0];
    };
    Tape<double> t3;
    Var xv3 = t3.leaf(x0, true);
    Var u = pd_up(t3, pd_down(t3, xv3, 3), 3);
    Var loss3 = mean_sq(t3, u, t3.leaf(target2, false));
    t3.backward(loss3);
    CHECK(max_rel_error(t3.grad(xv3), finite_diff_grad(loss_pd, x0, 1e-5)) < 1e-4);
}

TEST_CASE("RS uniformity: cell offsets hit each position with frequency 1/s^2 +- 0.02") {
    Rng rng(10);
    const std::int64_t s = 2, draws = 10000;
    // count over a single cell across many drawn maps
    std::vector<std::int64_t> counts(static_cast<std::size_t>(s * s), 0);
    for (std::int64_t d = 0; d < draws; ++d) {
        IndexMap m = draw_index_map(4, 4, s, rng);
        counts[static_cast<std::size_t>(m.dy[0] * s + m.dx[0])] += 1;
    }
    for (auto c : counts) {
        const double f = static_cast<double>(c) / static_cast<double>(draws);
        CHECK(f == doctest::Approx(0.25).epsilon(0.08));  // 1/s^2 +- 0.02
    }
}

TEST_CASE("same-map contract: both loss branches select identical positions") {
    Rng rng(11);
    Tensor<double> x = random_tensor<double>({1, 1, 8, 8}, rng);
    IndexMap m = draw_index_map(8, 8, 2, rng);
    // applying the map to x twice picks the same pixels
    CHECK(subsample_with_map(x, m).data == subsample_with_map(x, m).data);
    IndexMap m2 = m;
    CHECK(m == m2);
}

TEST_CASE("autocorrelation: iid near zero, boxed positive, zero offset exactly one") {
    Rng rng(12);
    Tensor<double> iid({1, 1, 128, 128});
    for (auto& v : iid.data) v = rng.normal();
    auto r_iid = autocorrelation(iid, {{0, 1}, {0, 0}});
    CHECK(std::abs(r_iid[0].r) < 3.0 / std::sqrt(128.0 * 127.0));
    CHECK(r_iid[1].r == 1.0);

    // blur with a 2x2 box: neighbor correlation becomes strongly positive
    NoiseSpec spec;
    spec.kind = NoiseKind::CorrelatedGaussian;
    spec.sigma = 1.0;
    Tensor<double> zero({1, 1, 128, 128});
    for (int trial = 0; trial < 10; ++trial) {
        Tensor<double> corr = add_noise(zero, spec, rng);
        auto r = autocorrelation(corr, {{0, 1}});
        CHECK(r[0].r > 0.2);
    }

    Tensor<double> flat = Tensor<double>::full({1, 1, 16, 16}, 0.5);
    auto r_flat = autocorrelation(flat, {{0, 1}});
    CHECK(r_flat[0].degenerate);
    CHECK(r_flat[0].r == 0.0);
}

TEST_CASE("decorrelation: RS2 weakens 2x2-box noise correlation in >= 9 of 10 trials") {
    Rng rng(13);
    NoiseSpec spec;
    spec.kind = NoiseKind::CorrelatedGaussian;
    spec.sigma = 0.1;
    Tensor<double> zero({1, 1, 64, 64});
    int wins = 0;
    for (int trial = 0; trial < 10; ++trial) {
        Tensor<double> noise = add_noise(zero, spec, rng);
        auto raw = autocorrelation(noise, {{0, 1}});
        auto [sub, map] = random_subsample(noise, 2, rng);
        auto subbed = autocorrelation(sub, {{0, 1}});
        if (std::abs(subbed[0].r) < std::abs(raw[0].r)) ++wins;
    }
    CHECK(wins >= 9);
}
