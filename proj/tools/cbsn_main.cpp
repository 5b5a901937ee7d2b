// cbsn command-line front end: make-noise, train, denoise, eval, verify.
// Exit codes: 0 success, 1 usage error, 2 invariant/verification failure,
// 3 I/O error.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cbsn/build_info.hpp"
#include "cbsn/checkpoint.hpp"
#include "cbsn/dataio.hpp"
#include "cbsn/metrics.hpp"
#include "cbsn/raster.hpp"
#include "cbsn/verify.hpp"

namespace fs = std::filesystem;
using namespace cbsn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerify = 2;
constexpr int kExitIo = 3;

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::string data_dir;
    std::int64_t seed = -1;  // CLI-given seed wins over the config
};

ExperimentConfig load_effective_config(const CommonOpts& opts) {
    ExperimentConfig cfg = load_config_file(opts.config_path);
    if (opts.seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(opts.seed);
        cfg.train.seed = cfg.seed;
    }
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    if (!opts.data_dir.empty()) cfg.data_dir = opts.data_dir;
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << text;
}

void atomic_save_checkpoint(const std::string& path, const CbsnParams& params) {
    const std::string tmp = path + ".tmp";
    save_checkpoint(tmp, params);
    fs::rename(tmp, path);
}

std::string fmt_row(const LogRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(r.iter), r.lr,
                  r.l_total, r.l_blind, r.l_self, r.l_inv, r.lambda_sch);
    return buf;
}

Tensor<float> clamp01(Tensor<float> t) {
    for (auto& v : t.data) v = std::min(1.f, std::max(0.f, v));
    return t;
}

int cmd_make_noise(const CommonOpts& opts) {
    ExperimentConfig cfg = load_effective_config(opts);
    if (cfg.out_dir.empty()) throw std::runtime_error("make-noise: no output directory (paths.out_dir or --out)");
    auto pairs = write_noise_set(cfg.out_dir, cfg);
    write_text((fs::path(cfg.out_dir) / "config.txt").string(), serialize_config(cfg));
    std::cout << "wrote " << pairs.size() << " clean/noisy pairs to " << cfg.out_dir << "\n";
    return kExitOk;
}

int cmd_train(const CommonOpts& opts, bool debug) {
    ExperimentConfig cfg = load_effective_config(opts);
    if (cfg.data_dir.empty()) throw std::runtime_error("train: no data directory (paths.data_dir or --data)");
    if (cfg.out_dir.empty()) throw std::runtime_error("train: no output directory (paths.out_dir or --out)");
    cfg.train.debug_checks = cfg.train.debug_checks || debug;

    NoisyDataset all = load_noisy_dir(cfg.data_dir);
    SplitIndices split = split_holdout(all.images.size(), cfg.holdout_frac, cfg.seed);
    NoisyDataset train_set;
    for (std::size_t i : split.train) train_set.images.push_back(all.images[i]);
    if (train_set.images.empty()) throw std::runtime_error("train: holdout split leaves no training images");

    fs::create_directories(cfg.out_dir);
    write_text((fs::path(cfg.out_dir) / "config.txt").string(), serialize_config(cfg));
    {
        std::string holdout_lines;
        for (std::size_t i : split.holdout) holdout_lines += std::to_string(i) + "\n";
        write_text((fs::path(cfg.out_dir) / "holdout.txt").string(), holdout_lines);
    }

    const std::string log_path = (fs::path(cfg.out_dir) / "metrics.log").string();
    std::ofstream log(log_path);
    if (!log) throw std::runtime_error("train: cannot write " + log_path);
    log << "# iter,lr,l_total,l_blind,l_self,l_inv,lambda_sch\n";

    const std::string ckpt_path = (fs::path(cfg.out_dir) / "checkpoint.cbsn").string();
    TrainHooks hooks;
    hooks.on_checkpoint = [&](std::int64_t, const CbsnParams& p) { atomic_save_checkpoint(ckpt_path, p); };
    hooks.on_log = [&](const LogRow& row) { log << fmt_row(row) << "\n" << std::flush; };

    TrainResult result = train(train_set, cfg.model, cfg.train, cfg.loss, hooks);
    atomic_save_checkpoint(ckpt_path, result.params);
    std::cout << "trained " << cfg.train.total_iters << " iterations; checkpoint at " << ckpt_path << "\n";
    return kExitOk;
}

int cmd_denoise(const std::string& ckpt, const std::string& in_path, const std::string& out_path, bool passthrough) {
    const bool raster_in = is_raster_file(in_path);
    Tensor<float> img = raster_in ? read_raster(in_path) : read_image8(in_path);
    Tensor<float> out;
    if (passthrough) {
        out = img;  // format-conversion path, network bypassed
    } else {
        CbsnParams params = load_checkpoint(ckpt);
        out = denoise(params, img);
    }
    if (raster_in)
        write_raster(out_path, out);
    else
        write_image8(out_path, out);
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& clean_dir, const std::string& noisy_dir,
             const std::string& report_path, std::int64_t period) {
    const auto clean_files = list_rasters(clean_dir, "clean_");
    const auto noisy_files = list_rasters(noisy_dir, "noisy_");
    if (clean_files.empty() || noisy_files.empty())
        throw std::runtime_error("eval: no clean/noisy rasters found in " + clean_dir + " and " + noisy_dir);
    if (clean_files.size() != noisy_files.size())
        throw std::runtime_error("eval: clean and noisy counts differ (" + std::to_string(clean_files.size()) + " vs " +
                                 std::to_string(noisy_files.size()) + ")");

    CbsnParams params = load_checkpoint(ckpt);

    std::ostringstream report;
    report << "# index,psnr_noisy,ssim_noisy,psnr_denoised,ssim_denoised,checkerboard_denoised\n";
    double sum_pn = 0, sum_sn = 0, sum_pd = 0, sum_sd = 0, sum_cb = 0;
    for (std::size_t i = 0; i < clean_files.size(); ++i) {
        Tensor<float> clean = read_raster(clean_files[i]);
        Tensor<float> noisy = read_raster(noisy_files[i]);
        Tensor<float> den = clamp01(denoise(params, noisy));
        const double pn = psnr(clamp01(noisy), clean), sn = ssim(clamp01(noisy), clean);
        const double pd = psnr(den, clean), sd = ssim(den, clean);
        const double cb = checkerboard_score(den, period);
        sum_pn += pn;
        sum_sn += sn;
        sum_pd += pd;
        sum_sd += sd;
        sum_cb += cb;
        char buf[256];
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.8g\n", i, pn, sn, pd, sd, cb);
        report << buf;
    }
    const double n = static_cast<double>(clean_files.size());
    char buf[256];
    std::snprintf(buf, sizeof buf, "mean,%.6f,%.6f,%.6f,%.6f,%.8g\n", sum_pn / n, sum_sn / n, sum_pd / n, sum_sd / n,
                  sum_cb / n);
    report << buf;

    std::cout << report.str();
    if (!report_path.empty()) write_text(report_path, report.str());
    return kExitOk;
}

int cmd_verify(const std::string& level, std::uint64_t seed) {
    std::vector<CheckResult> results;
    if (level == "quick")
        results = verify_quick(seed);
    else if (level == "full")
        results = verify_full(seed);
    else
        throw CLI::ValidationError("--level must be quick or full");

    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "verify: all checks passed\n" : "verify: FAILURES detected\n");
    return all_pass ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"C-BSN self-supervised denoising toolkit"};
    app.set_version_flag("--version", version());
    app.require_subcommand(1);

    CommonOpts opts;

    auto* mk = app.add_subcommand("make-noise", "generate clean/noisy raster pairs and a manifest");
    mk->add_option("--config", opts.config_path, "experiment config file")->required();
    mk->add_option("--seed", opts.seed, "override the config seed");
    mk->add_option("--out", opts.out_dir, "output directory (overrides paths.out_dir)");

    bool debug = false;
    auto* tr = app.add_subcommand("train", "train a C-BSN on the noisy rasters of a data directory");
    tr->add_option("--config", opts.config_path, "experiment config file")->required();
    tr->add_option("--seed", opts.seed, "override the config seed");
    tr->add_option("--out", opts.out_dir, "run directory (overrides paths.out_dir)");
    tr->add_option("--data", opts.data_dir, "data directory (overrides paths.data_dir)");
    tr->add_flag("--debug", debug, "enable finite-value invariant checks during training");

    std::string ckpt, in_path, out_path, clean_dir, noisy_dir, report_path;
    bool passthrough = false;
    auto* dn = app.add_subcommand("denoise", "denoise one raster or 8-bit PGM/PPM image");
    dn->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
    dn->add_option("--in", in_path, "input image")->required();
    dn->add_option("--out", out_path, "output image")->required();
    dn->add_flag("--passthrough", passthrough, "bypass the network (format conversion only)");

    std::int64_t period = 2;
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM/checkerboard report for clean/noisy pairs");
    ev->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
    ev->add_option("--clean", clean_dir, "directory with clean_*.cbr")->required();
    ev->add_option("--noisy", noisy_dir, "directory with noisy_*.cbr")->required();
    ev->add_option("--out", report_path, "also write the report to this file");
    ev->add_option("--period", period, "checkerboard period (default 2)");

    std::string level = "quick";
    std::int64_t vseed = 1;
    auto* vf = app.add_subcommand("verify", "run the invariant self-checks");
    vf->add_option("--level", level, "quick or full");
    vf->add_option("--seed", vseed, "seed for the randomized checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (mk->parsed()) return cmd_make_noise(opts);
        if (tr->parsed()) return cmd_train(opts, debug);
        if (dn->parsed()) return cmd_denoise(ckpt, in_path, out_path, passthrough);
        if (ev->parsed()) return cmd_eval(ckpt, clean_dir, noisy_dir, report_path, period);
        if (vf->parsed()) return cmd_verify(level, static_cast<std::uint64_t>(vseed));
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitUsage;
}
