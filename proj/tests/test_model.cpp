#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "cbsn/checkpoint.hpp"
#include "cbsn/model.hpp"
#include "test_util.hpp"

using namespace cbsn;
using testutil::random_tensor;

TEST_CASE("conditional_mask: paper values for k=3 and the degenerate k=1") {
    Tensor<float> blind = conditional_mask<float>(3, true);
    CHECK(blind.data == std::vector<float>{1, 1, 1, 1, 0, 1, 1, 1, 1});
    Tensor<float> open = conditional_mask<float>(3, false);
    CHECK(open.data == std::vector<float>(9, 1.f));
    Tensor<float> tiny = conditional_mask<float>(1, true);
    CHECK(tiny.data == std::vector<float>{0.f});
    CHECK_THROWS_AS(conditional_mask<float>(4, true), std::invalid_argument);
}

TEST_CASE("config validation pins the blind-spot dilation rule") {
    CbsnConfig bad;
    bad.branch_specs = {{3, 3}};  // must be (k-1)/2+1 = 2
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CbsnConfig even;
    even.branch_specs = {{4, 2}};
    CHECK_THROWS_AS(even.validate(), std::invalid_argument);
    CbsnConfig ok;
    CHECK_NOTHROW(ok.validate());
    CHECK(ok.min_input() == 7);
}

TEST_CASE("build: deterministic, seed-sensitive, frozen parameter count") {
    CbsnConfig cfg;
    CbsnParams a = build(cfg, 42);
    CbsnParams b = build(cfg, 42);
    CHECK(a.tensors.size() == b.tensors.size());
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        CHECK(a.tensors[i].first == b.tensors[i].first);
        CHECK(a.tensors[i].second.data == b.tensors[i].second.data);
    }

    CbsnParams c = build(cfg, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i)
        if (a.tensors[i].second.data != c.tensors[i].second.data) any_diff = true;
    CHECK(any_diff);

    // architecture formula, counted independently: head + branches + tail
    const std::int64_t w = cfg.base_width;
    std::int64_t expect = w * cfg.in_channels + w;  // head 1x1
    for (auto [k, d] : cfg.branch_specs) {
        expect += w * w * k * k + w;                                  // masked conv
        expect += cfg.modules_per_branch * (w * w * 9 + w + w * w + w);  // dilated + pointwise
    }
    const std::int64_t cat = w * static_cast<std::int64_t>(cfg.branch_specs.size());
    expect += w * cat + w;                                   // tail0
    expect += (cfg.tail_depth - 2) * (w * w + w);            // middle tail convs
    expect += cfg.out_channels * w + cfg.out_channels;       // final tail conv
    CHECK(a.parameter_count() == expect);
    CHECK(a.parameter_count() == 20019);  // regression value for the desk default

    // biases start at zero
    for (float v : a.at("head.b").data) CHECK(v == 0.f);
}

TEST_CASE("forward: zero input with zero biases gives zero output") {
    CbsnConfig cfg;
    cfg.base_width = 8;
    cfg.modules_per_branch = 1;
    CbsnParams p = build(cfg, 7);
    Tensor<float> x({1, 3, 16, 16});
    Tensor<float> y = cbsn_forward(p, x, false);
    for (float v : y.data) CHECK(v == 0.f);
    Tensor<float> yb = cbsn_forward(p, x, true);
    for (float v : yb.data) CHECK(v == 0.f);
}

TEST_CASE("forward rejects undersized inputs") {
    CbsnConfig cfg;
    CbsnParams p = build(cfg, 7);
    Tensor<float> x({1, 3, 6, 16});  // min is 7
    CHECK_THROWS_AS(cbsn_forward(p, x, false), std::invalid_argument);
}

TEST_CASE("blind-spot exclusion is exact; non-blind output depends on the center") {
    Rng rng(100);
    std::int64_t nonblind_hits = 0, trials_total = 0;
    for (int seed = 0; seed < 5; ++seed) {
        CbsnConfig cfg;
        cfg.base_width = 8;
        CbsnParams p = build(cfg, 1000 + static_cast<std::uint64_t>(seed));
        Tensor<float> x({1, 3, 12, 12});
        for (auto& v : x.data) v = static_cast<float>(rng.normal());

        for (int trial = 0; trial < 20; ++trial) {
            const std::int64_t i = rng.uniform_int(12), j = rng.uniform_int(12);
            Tensor<float> x2 = x;
            for (std::int64_t c = 0; c < 3; ++c) x2.at4(0, c, i, j) += static_cast<float>(1.0 + rng.uniform());

            Tensor<float> yb1 = cbsn_forward(p, x, true);
            Tensor<float> yb2 = cbsn_forward(p, x2, true);
            for (std::int64_t c = 0; c < 3; ++c) {
                // bitwise: the blind output never reads the perturbed pixel
                CHECK(yb1.at4(0, c, i, j) == yb2.at4(0, c, i, j));
            }

            Tensor<float> yn1 = cbsn_forward(p, x, false);
            Tensor<float> yn2 = cbsn_forward(p, x2, false);
            double delta = 0;
            for (std::int64_t c = 0; c < 3; ++c)
                delta = std::max(delta, std::abs(static_cast<double>(yn1.at4(0, c, i, j)) - yn2.at4(0, c, i, j)));
            nonblind_hits += delta > 0.0;
            ++trials_total;
        }
    }
    // generic weights make the dependence visible in essentially every trial
    CHECK(static_cast<double>(nonblind_hits) / static_cast<double>(trials_total) >= 0.99);
}

TEST_CASE("parameters are shared between blind and non-blind calls") {
    CbsnConfig cfg;
    cfg.base_width = 8;
    cfg.modules_per_branch = 1;
    CbsnParams p = build(cfg, 3);
    Rng rng(4);
    Tensor<float> x = random_tensor<float>({1, 3, 10, 10}, rng);

    Tensor<float> y_blind = cbsn_forward(p, x, true);
    Tensor<float> y_open = cbsn_forward(p, x, false);

    p.at("tail2.w").data[0] += 0.5f;  // one shared weight
    Tensor<float> y_blind2 = cbsn_forward(p, x, true);
    Tensor<float> y_open2 = cbsn_forward(p, x, false);

    CHECK(y_blind.data != y_blind2.data);
    CHECK(y_open.data != y_open2.data);
}

TEST_CASE("translation equivariance away from borders") {
    CbsnConfig cfg;
    CbsnParams p = build(cfg, 11);
    Rng rng(12);
    const std::int64_t H = 48, W = 48, shift = 3;
    Tensor<float> x = random_tensor<float>({1, 3, H, W}, rng);

    Tensor<float> xs({1, 3, H, W});
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < H - shift; ++i)
            for (std::int64_t j = 0; j < W - shift; ++j) xs.at4(0, c, i + shift, j + shift) = x.at4(0, c, i, j);

    Tensor<float> y = cbsn_forward(p, x, false);
    Tensor<float> ys = cbsn_forward(p, xs, false);

    // crop twice the receptive-field margin: masked 5x5 reaches 2, plus two
    // dilated 3x3 convs with dilation 3 reach 6 more
    const std::int64_t margin = 2 * (2 + 2 * 3);
    double worst = 0;
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t i = margin; i < H - margin - shift; ++i)
            for (std::int64_t j = margin; j < W - margin - shift; ++j)
                worst = std::max(worst,
                                 std::abs(static_cast<double>(y.at4(0, c, i, j)) - ys.at4(0, c, i + shift, j + shift)));
    CHECK(worst < 1e-5);
}

TEST_CASE("checkpoint: bit-exact round-trip and config reconstruction") {
    CbsnConfig cfg;
    cfg.base_width = 8;
    cfg.modules_per_branch = 1;
    cfg.branch_specs = {{3, 2}, {5, 3}};
    CbsnParams p = build(cfg, 99);
    // make values interesting
    Rng rng(5);
    for (auto& [name, t] : p.tensors)
        for (auto& v : t.data) v += static_cast<float>(rng.normal() * 1e-3);

    const std::string path = (std::filesystem::temp_directory_path() / "cbsn_test_ckpt.cbsn").string();
    save_checkpoint(path, p);
    CbsnParams q = load_checkpoint(path);
    std::remove(path.c_str());

    CHECK(q.tensors.size() == p.tensors.size());
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        CHECK(q.tensors[i].first == p.tensors[i].first);
        CHECK(q.tensors[i].second.shape == p.tensors[i].second.shape);
        CHECK(q.tensors[i].second.data == p.tensors[i].second.data);  // bitwise
    }
    CHECK(q.config.base_width == cfg.base_width);
    CHECK(q.config.modules_per_branch == cfg.modules_per_branch);
    CHECK(q.config.branch_specs == cfg.branch_specs);
    CHECK(q.config.tail_depth == cfg.tail_depth);
    CHECK(q.config.in_channels == cfg.in_channels);
    CHECK(q.config.out_channels == cfg.out_channels);

    // loading garbage fails cleanly
    CHECK_THROWS(load_checkpoint("/nonexistent/path/x.cbsn"));
}

TEST_CASE("forward determinism: bitwise-identical repeat calls") {
    CbsnConfig cfg;
    cfg.base_width = 8;
    CbsnParams p = build(cfg, 21);
    Rng rng(22);
    Tensor<float> x = random_tensor<float>({2, 3, 16, 16}, rng);
    Tensor<float> y1 = cbsn_forward(p, x, true);
    Tensor<float> y2 = cbsn_forward(p, x, true);
    CHECK(y1.data == y2.data);
}
