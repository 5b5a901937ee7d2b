#include "cbsn/dataio.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cbsn/raster.hpp"

namespace cbsn {

namespace fs = std::filesystem;

std::vector<NoisePairFiles> write_noise_set(const std::string& dir, const ExperimentConfig& cfg) {
    fs::create_directories(dir);
    std::vector<NoisePairFiles> pairs;
    Rng root(cfg.seed);
    for (std::int64_t i = 0; i < cfg.data_count; ++i) {
        char cname[64], nname[64];
        std::snprintf(cname, sizeof cname, "clean_%04d.cbr", static_cast<int>(i));
        std::snprintf(nname, sizeof nname, "noisy_%04d.cbr", static_cast<int>(i));
        const std::uint64_t stream = 1000 + static_cast<std::uint64_t>(i);
        Rng rng = root.split(stream);
        Tensor<float> clean = gen_clean(cfg.clean_kind, cfg.data_height, cfg.data_width, cfg.data_channels, rng);
        Tensor<float> noisy = add_noise(clean, cfg.noise, rng);
        write_raster((fs::path(dir) / cname).string(), clean);
        write_raster((fs::path(dir) / nname).string(), noisy);
        pairs.push_back({cname, nname, stream});
    }

    std::ofstream man(fs::path(dir) / "manifest.txt");
    if (!man) throw std::runtime_error("make-noise: cannot write manifest in " + dir);
    man << "# cbsn noise set\n";
    man << "count = " << cfg.data_count << "\n";
    man << "seed = " << cfg.seed << "\n";
    man << "noise.kind = "
        << (cfg.noise.kind == NoiseKind::IidGaussian        ? "iid"
            : cfg.noise.kind == NoiseKind::CorrelatedGaussian ? "correlated"
                                                              : "heteroscedastic")
        << "\n";
    man << "noise.sigma = " << cfg.noise.sigma << "\n";
    for (const auto& p : pairs) man << p.clean << ", " << p.noisy << ", stream=" << p.stream << "\n";
    return pairs;
}

std::vector<std::string> list_rasters(const std::string& dir, const std::string& prefix) {
    std::vector<std::string> names;
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind(prefix, 0) == 0 && name.size() > 4 && name.substr(name.size() - 4) == ".cbr")
            names.push_back(entry.path().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

NoisyDataset load_noisy_dir(const std::string& dir) {
    NoisyDataset data;
    for (const auto& path : list_rasters(dir, "noisy_")) data.images.push_back(read_raster(path));
    if (data.images.empty()) throw std::runtime_error("no noisy_*.cbr rasters found in " + dir);
    return data;
}

SplitIndices split_holdout(std::size_t n, double frac, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed ^ 0x5b1d5eedull);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i)))]);
    SplitIndices out;
    const std::size_t holdout = n > 0 ? static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n))) : 0;
    for (std::size_t i = 0; i < n; ++i)
        (i < holdout ? out.holdout : out.train).push_back(idx[i]);
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.holdout.begin(), out.holdout.end());
    return out;
}

}  // namespace cbsn
