#include "cbsn/raster.hpp"

#include <cfenv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace cbsn {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("raster: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_raster(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 3) throw std::invalid_argument("write_raster: image must be [C,H,W]");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("raster: cannot open " + path + " for writing");
    os.write("CBR1", 4);
    put_u32(os, static_cast<std::uint32_t>(img.dim(2)));  // width
    put_u32(os, static_cast<std::uint32_t>(img.dim(1)));  // height
    put_u32(os, static_cast<std::uint32_t>(img.dim(0)));  // channels
    os.write(reinterpret_cast<const char*>(img.ptr()), static_cast<std::streamsize>(img.data.size() * 4));
    if (!os) throw std::runtime_error("raster: write failed for " + path);
}

Tensor<float> read_raster(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("raster: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CBR1", 4) != 0)
        throw std::runtime_error("raster: bad magic in " + path);
    const std::int64_t W = get_u32(is), H = get_u32(is), C = get_u32(is);
    if (W < 1 || H < 1 || C < 1) throw std::runtime_error("raster: bad dims in " + path);
    Tensor<float> img({C, H, W});
    if (!is.read(reinterpret_cast<char*>(img.ptr()), static_cast<std::streamsize>(img.data.size() * 4)))
        throw std::runtime_error("raster: truncated data in " + path);
    return img;
}

bool is_raster_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    char magic[4];
    return is.read(magic, 4) && std::memcmp(magic, "CBR1", 4) == 0;
}

void write_image8(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 3) throw std::invalid_argument("write_image8: image must be [C,H,W]");
    const std::int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (C != 1 && C != 3) throw std::invalid_argument("write_image8: only 1 (PGM) or 3 (PPM) channels");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("image8: cannot open " + path + " for writing");
    os << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(W * C));
    for (std::int64_t i = 0; i < H; ++i) {
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t c = 0; c < C; ++c) {
                // scale in double and round half to even
                const double v = static_cast<double>(img.data[(c * H + i) * W + j]) * 255.0;
                const double r = std::nearbyint(std::clamp(v, 0.0, 255.0));
                row[static_cast<std::size_t>(j * C + c)] = static_cast<unsigned char>(r);
            }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw std::runtime_error("image8: write failed for " + path);
}

Tensor<float> read_image8(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("image8: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5" && magic != "P6") throw std::runtime_error("image8: unsupported format in " + path);
    const std::int64_t C = magic == "P5" ? 1 : 3;

    auto next_token = [&is, &path]() {
        std::string tok;
        while (is >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(is, rest);
                continue;
            }
            return tok;
        }
        throw std::runtime_error("image8: truncated header in " + path);
    };
    const std::int64_t W = std::stoll(next_token());
    const std::int64_t H = std::stoll(next_token());
    const std::int64_t maxval = std::stoll(next_token());
    if (W < 1 || H < 1 || maxval != 255) throw std::runtime_error("image8: expected 8-bit image in " + path);
    is.get();  // single whitespace after maxval

    std::vector<unsigned char> raw(static_cast<std::size_t>(W * H * C));
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw std::runtime_error("image8: truncated data in " + path);
    Tensor<float> img({C, H, W});
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t c = 0; c < C; ++c)
                img.data[(c * H + i) * W + j] =
                    static_cast<float>(static_cast<double>(raw[static_cast<std::size_t>((i * W + j) * C + c)]) / 255.0);
    return img;
}

}  // namespace cbsn
