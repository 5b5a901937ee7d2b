#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cbsn/ops.hpp"
#include "cbsn/rng.hpp"

namespace cbsn {

/// Architecture of the conditional blind-spot network: a 1x1 head, one
/// conditionally-masked branch per (kernel, dilation) spec, dilated-conv
/// modules with residual skips, and a 1x1 tail.
struct CbsnConfig {
    std::int64_t base_width = 16;
    std::int64_t modules_per_branch = 2;
    std::vector<std::pair<std::int64_t, std::int64_t>> branch_specs{{3, 2}, {5, 3}};  // (masked k, dilation)
    std::int64_t tail_depth = 3;
    std::int64_t in_channels = 3;
    std::int64_t out_channels = 3;

    void validate() const {
        if (base_width < 1 || modules_per_branch < 1 || tail_depth < 1 || in_channels < 1 || out_channels < 1)
            throw std::invalid_argument("CbsnConfig: all counts must be >= 1");
        if (branch_specs.empty()) throw std::invalid_argument("CbsnConfig: need at least one branch");
        for (auto [k, d] : branch_specs) {
            if (k < 1 || k % 2 == 0) throw std::invalid_argument("CbsnConfig: masked kernel size must be odd");
            // d = (k-1)/2 + 1 is what keeps dilated offsets from ever
            // cancelling a masked-conv offset, i.e. the blind spot exact.
            if (d != (k - 1) / 2 + 1)
                throw std::invalid_argument("CbsnConfig: branch dilation must equal (k-1)/2 + 1, got k=" +
                                            std::to_string(k) + " d=" + std::to_string(d));
        }
    }

    std::int64_t max_dilation() const {
        std::int64_t m = 1;
        for (auto [k, d] : branch_specs) m = std::max(m, d);
        return m;
    }

    /// Smallest admissible input side.
    std::int64_t min_input() const { return 2 * max_dilation() + 1; }
};

/// All learnable tensors in a named, fixed order. Blind and non-blind calls
/// read this same storage.
template <typename T>
struct CbsnParamsT {
    CbsnConfig config;
    std::vector<std::pair<std::string, Tensor<T>>> tensors;

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : tensors) n += t.numel();
        return n;
    }

    Tensor<T>& at(const std::string& name) {
        for (auto& [n, t] : tensors)
            if (n == name) return t;
        throw std::out_of_range("no parameter named " + name);
    }
    const Tensor<T>& at(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw std::out_of_range("no parameter named " + name);
    }

    template <typename U>
    CbsnParamsT<U> cast() const {
        CbsnParamsT<U> out;
        out.config = config;
        for (const auto& [n, t] : tensors) out.tensors.emplace_back(n, t.template cast<U>());
        return out;
    }
};

using CbsnParams = CbsnParamsT<float>;

/// Mask of Eq-style conditional convolution: all-ones, with the center
/// zeroed when the blind condition is on. No normalization between the two
/// conditions.
template <typename T>
Tensor<T> conditional_mask(std::int64_t k, bool blind) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("conditional_mask: k must be odd, got " + std::to_string(k));
    Tensor<T> m = Tensor<T>::full({k, k}, T(1));
    if (blind) m.data[static_cast<std::size_t>((k * k) / 2)] = T(0);
    return m;
}

namespace detail {

template <typename T>
Tensor<T> init_kernel(Shape shape, Rng& rng) {
    // fan-in-scaled zero-mean init; draws happen in double so float and
    // double builds from one seed agree
    Tensor<T> t(std::move(shape));
    const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
    const double s = 1.0 / std::sqrt(fan_in);
    for (auto& v : t.data) v = static_cast<T>(s * rng.normal());
    return t;
}

}  // namespace detail

/// Deterministic parameter initialization from a seed; biases zero.
template <typename T = float>
CbsnParamsT<T> build(const CbsnConfig& config, std::uint64_t seed) {
    config.validate();
    CbsnParamsT<T> p;
    p.config = config;
    Rng rng(seed);
    const std::int64_t w = config.base_width;

    auto conv = [&](const std::string& name, std::int64_t cout, std::int64_t cin, std::int64_t k) {
        p.tensors.emplace_back(name + ".w", detail::init_kernel<T>({cout, cin, k, k}, rng));
        p.tensors.emplace_back(name + ".b", Tensor<T>({cout}));
    };

    conv("head", w, config.in_channels, 1);
    for (std::size_t bi = 0; bi < config.branch_specs.size(); ++bi) {
        const std::string b = "branch" + std::to_string(bi);
        conv(b + ".masked", w, w, config.branch_specs[bi].first);
        for (std::int64_t mi = 0; mi < config.modules_per_branch; ++mi) {
            const std::string m = b + ".mod" + std::to_string(mi);
            conv(m + ".dilated", w, w, 3);
            conv(m + ".pointwise", w, w, 1);
        }
    }
    const std::int64_t cat_width = w * static_cast<std::int64_t>(config.branch_specs.size());
    for (std::int64_t ti = 0; ti < config.tail_depth; ++ti) {
        const std::int64_t cin = ti == 0 ? cat_width : w;
        const std::int64_t cout = ti == config.tail_depth - 1 ? config.out_channels : w;
        conv("tail" + std::to_string(ti), cout, cin, 1);
    }
    return p;
}

/// Tape handles for every parameter tensor, in declaration order.
template <typename T>
struct BoundParams {
    const CbsnParamsT<T>* params = nullptr;
    std::vector<Var> vars;

    Var at(const std::string& name) const {
        for (std::size_t i = 0; i < params->tensors.size(); ++i)
            if (params->tensors[i].first == name) return vars[i];
        throw std::out_of_range("no parameter named " + name);
    }
};

template <typename T>
BoundParams<T> bind_params(Tape<T>& t, const CbsnParamsT<T>& params) {
    BoundParams<T> b;
    b.params = &params;
    b.vars.reserve(params.tensors.size());
    for (const auto& [name, tensor] : params.tensors) b.vars.push_back(t.leaf(tensor, true));
    return b;
}

/// The network graph. `blind` switches the masks of the branch head
/// convolutions on shared parameters; everything else is identical between
/// the two conditions.
template <typename T>
Var cbsn_forward(Tape<T>& t, const BoundParams<T>& p, Var x, bool blind) {
    const CbsnConfig& cfg = p.params->config;
    const Tensor<T>& xv = t.value(x);
    if (xv.rank() != 4) throw std::invalid_argument("cbsn_forward: input must be [B,C,H,W]");
    if (xv.dim(1) != cfg.in_channels)
        throw std::invalid_argument("cbsn_forward: expected " + std::to_string(cfg.in_channels) + " channels, got " +
                                    std::to_string(xv.dim(1)));
    if (xv.dim(2) < cfg.min_input() || xv.dim(3) < cfg.min_input())
        throw std::invalid_argument("cbsn_forward: input " + std::to_string(xv.dim(2)) + "x" + std::to_string(xv.dim(3)) +
                                    " is smaller than the receptive-field minimum " + std::to_string(cfg.min_input()));

    Var h = conv2d(t, x, p.at("head.w"), p.at("head.b"), 1);

    std::optional<Var> cat;
    for (std::size_t bi = 0; bi < cfg.branch_specs.size(); ++bi) {
        const auto [k, d] = cfg.branch_specs[bi];
        const std::string b = "branch" + std::to_string(bi);
        const Tensor<T> mask = conditional_mask<T>(k, blind);
        Var y = conv2d(t, h, p.at(b + ".masked.w"), p.at(b + ".masked.b"), 1, blind ? &mask : nullptr);
        for (std::int64_t mi = 0; mi < cfg.modules_per_branch; ++mi) {
            const std::string m = b + ".mod" + std::to_string(mi);
            Var z = conv2d(t, y, p.at(m + ".dilated.w"), p.at(m + ".dilated.b"), d);
            z = conv2d(t, z, p.at(m + ".pointwise.w"), p.at(m + ".pointwise.b"), 1);
            y = add(t, y, z);
        }
        cat = cat ? concat_channels(t, *cat, y) : y;
    }

    Var u = *cat;
    for (std::int64_t ti = 0; ti < cfg.tail_depth; ++ti) {
        u = conv2d(t, u, p.at("tail" + std::to_string(ti) + ".w"), p.at("tail" + std::to_string(ti) + ".b"), 1);
        if (ti + 1 < cfg.tail_depth) u = relu(t, u);  // final layer stays linear
    }
    return u;
}

/// Plain forward on a scratch tape, values only.
template <typename T>
Tensor<T> cbsn_forward(const CbsnParamsT<T>& params, const Tensor<T>& x, bool blind) {
    Tape<T> t;
    BoundParams<T> b;
    b.params = &params;
    b.vars.reserve(params.tensors.size());
    for (const auto& [name, tensor] : params.tensors) b.vars.push_back(t.leaf(tensor, false));
    return t.value(cbsn_forward(t, b, t.leaf(x, false), blind));
}

}  // namespace cbsn
