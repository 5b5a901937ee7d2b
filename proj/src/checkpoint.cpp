#include "cbsn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace cbsn {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

static_assert(sizeof(float) == 4);

void put_f32(std::ostream& os, const float* data, std::size_t n) {
    // x86 is little-endian; raw bytes are the wire format
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

// Recover the architecture from tensor names and shapes. Branch dilation is
// pinned to (k-1)/2+1 by the config invariant, so shapes determine it.
CbsnConfig config_from_tensors(const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
    CbsnConfig cfg;
    cfg.branch_specs.clear();
    auto find = [&](const std::string& name) -> const Tensor<float>* {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    };

    const Tensor<float>* head = find("head.w");
    if (!head || head->rank() != 4) throw std::runtime_error("checkpoint: missing head.w");
    cfg.base_width = head->dim(0);
    cfg.in_channels = head->dim(1);

    for (std::size_t bi = 0;; ++bi) {
        const Tensor<float>* mw = find("branch" + std::to_string(bi) + ".masked.w");
        if (!mw) break;
        const std::int64_t k = mw->dim(2);
        cfg.branch_specs.emplace_back(k, (k - 1) / 2 + 1);
    }
    std::int64_t modules = 0;
    while (find("branch0.mod" + std::to_string(modules) + ".dilated.w")) ++modules;
    cfg.modules_per_branch = modules;

    std::int64_t tail = 0;
    const Tensor<float>* last = nullptr;
    for (;; ++tail) {
        const Tensor<float>* tw = find("tail" + std::to_string(tail) + ".w");
        if (!tw) break;
        last = tw;
    }
    cfg.tail_depth = tail;
    if (!last) throw std::runtime_error("checkpoint: missing tail convolutions");
    cfg.out_channels = last->dim(0);

    cfg.validate();
    return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const CbsnParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write("CBSN", 4);
    put_u32(os, kVersion);
    for (const auto& [name, t] : params.tensors) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) put_u32(os, static_cast<std::uint32_t>(t.dim(d)));
        put_f32(os, t.ptr(), t.data.size());
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

CbsnParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CBSN", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    CbsnParams params;
    while (true) {
        is.peek();
        if (is.eof()) break;
        const std::uint32_t name_len = get_u32(is);
        if (name_len > 4096) throw std::runtime_error("checkpoint: implausible name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated name");
        const std::uint32_t rank = get_u32(is);
        if (rank > 8) throw std::runtime_error("checkpoint: implausible rank");
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<std::int64_t>(get_u32(is));
        Tensor<float> t(shape);
        if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.data.size() * 4)))
            throw std::runtime_error("checkpoint: truncated tensor data");
        params.tensors.emplace_back(std::move(name), std::move(t));
    }
    params.config = config_from_tensors(params.tensors);
    return params;
}

}  // namespace cbsn
