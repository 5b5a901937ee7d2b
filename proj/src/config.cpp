#include "cbsn/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace cbsn {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
    }
}

double parse_float(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

Downsampler parse_downsampler(const std::string& key, const std::string& v) {
    if (v == "s2b") return Downsampler::S2B;
    if (v == "pd") return Downsampler::PD;
    if (v == "rs") return Downsampler::RS;
    throw std::invalid_argument("config: " + key + " must be s2b|pd|rs, got '" + v + "'");
}

std::string downsampler_name(Downsampler d) {
    switch (d) {
        case Downsampler::S2B: return "s2b";
        case Downsampler::PD: return "pd";
        case Downsampler::RS: return "rs";
    }
    return "?";
}

std::string fmt_float(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::pair<std::int64_t, std::int64_t>> parse_branches(const std::string& v) {
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("config: model.branches entries must be k:d, got '" + item + "'");
        out.emplace_back(parse_int("model.branches", trim(item.substr(0, colon))),
                         parse_int("model.branches", trim(item.substr(colon + 1))));
    }
    if (out.empty()) throw std::invalid_argument("config: model.branches must not be empty");
    return out;
}

std::string branches_str(const std::vector<std::pair<std::int64_t, std::int64_t>>& b) {
    std::string s;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(b[i].first) + ":" + std::to_string(b[i].second);
    }
    return s;
}

void apply_preset(ExperimentConfig& cfg, const std::string& name) {
    if (name == "paper") {
        cfg.train = TrainConfig{};
        cfg.loss = LossWeights{};
    } else if (name == "desk") {
        cfg.train = desk_train_config();
        cfg.loss = desk_loss_weights();
        cfg.model = desk_cbsn_config();
    } else if (name != "none") {
        throw std::invalid_argument("config: unknown preset '" + name + "'");
    }
}

void apply_key(ExperimentConfig& c, const std::string& key, const std::string& v) {
    if (key == "preset") apply_preset(c, v);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, v));

    else if (key == "model.base_width") c.model.base_width = parse_int(key, v);
    else if (key == "model.modules_per_branch") c.model.modules_per_branch = parse_int(key, v);
    else if (key == "model.branches") c.model.branch_specs = parse_branches(v);
    else if (key == "model.tail_depth") c.model.tail_depth = parse_int(key, v);
    else if (key == "model.in_channels") c.model.in_channels = parse_int(key, v);
    else if (key == "model.out_channels") c.model.out_channels = parse_int(key, v);

    else if (key == "loss.lambda_inv") c.loss.lambda_inv = parse_float(key, v);
    else if (key == "loss.warmup_iters") c.loss.warmup_iters = parse_int(key, v);
    else if (key == "loss.rs_stride") c.loss.rs_stride = parse_int(key, v);
    else if (key == "loss.blind_stride") c.loss.blind_stride = parse_int(key, v);
    else if (key == "loss.blind_downsampler") c.loss.blind_downsampler = parse_downsampler(key, v);
    else if (key == "loss.inv_downsampler") c.loss.inv_downsampler = parse_downsampler(key, v);
    else if (key == "loss.schedule") {
        if (v == "warmup") c.loss.schedule = ScheduleMode::Warmup;
        else if (v == "zero") c.loss.schedule = ScheduleMode::Zero;
        else if (v == "one") c.loss.schedule = ScheduleMode::One;
        else if (v == "inf") c.loss.schedule = ScheduleMode::Inf;
        else throw std::invalid_argument("config: loss.schedule must be warmup|zero|one|inf, got '" + v + "'");
    }

    else if (key == "train.lr0") c.train.lr0 = parse_float(key, v);
    else if (key == "train.lr_halve_every") c.train.lr_halve_every = parse_int(key, v);
    else if (key == "train.lr_floor") c.train.lr_floor = parse_float(key, v);
    else if (key == "train.total_iters") c.train.total_iters = parse_int(key, v);
    else if (key == "train.batch") c.train.batch = parse_int(key, v);
    else if (key == "train.patch") c.train.patch = parse_int(key, v);
    else if (key == "train.checkpoint_every") c.train.checkpoint_every = parse_int(key, v);
    else if (key == "train.log_every") c.train.log_every = parse_int(key, v);
    else if (key == "train.debug_checks") c.train.debug_checks = parse_bool(key, v);

    else if (key == "noise.kind") {
        if (v == "iid") c.noise.kind = NoiseKind::IidGaussian;
        else if (v == "correlated") c.noise.kind = NoiseKind::CorrelatedGaussian;
        else if (v == "heteroscedastic") c.noise.kind = NoiseKind::Heteroscedastic;
        else throw std::invalid_argument("config: noise.kind must be iid|correlated|heteroscedastic, got '" + v + "'");
    } else if (key == "noise.sigma") c.noise.sigma = parse_float(key, v);
    else if (key == "noise.corr_kernel") {
        if (v == "box2") {
            c.noise.corr_kh = c.noise.corr_kw = 2;
            c.noise.corr_kernel.assign(4, 0.25);
        } else if (v == "box3") {
            c.noise.corr_kh = c.noise.corr_kw = 3;
            c.noise.corr_kernel.assign(9, 1.0 / 9.0);
        } else {
            throw std::invalid_argument("config: noise.corr_kernel must be box2|box3, got '" + v + "'");
        }
    } else if (key == "noise.het_a") c.noise.het_a = parse_float(key, v);
    else if (key == "noise.het_b") c.noise.het_b = parse_float(key, v);

    else if (key == "data.count") c.data_count = parse_int(key, v);
    else if (key == "data.height") c.data_height = parse_int(key, v);
    else if (key == "data.width") c.data_width = parse_int(key, v);
    else if (key == "data.channels") c.data_channels = parse_int(key, v);
    else if (key == "data.clean_kind") {
        if (v == "band") c.clean_kind = CleanKind::BandLimited;
        else if (v == "gradient") c.clean_kind = CleanKind::Gradient;
        else if (v == "checker") c.clean_kind = CleanKind::Checker;
        else throw std::invalid_argument("config: data.clean_kind must be band|gradient|checker, got '" + v + "'");
    } else if (key == "data.holdout_frac") c.holdout_frac = parse_float(key, v);

    else if (key == "paths.data_dir") c.data_dir = v;
    else if (key == "paths.out_dir") c.out_dir = v;

    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        apply_key(cfg, key, value);
    }
    cfg.train.seed = cfg.seed;
    cfg.model.validate();
    cfg.loss.validate();
    cfg.noise.validate();
    if (cfg.holdout_frac < 0.0 || cfg.holdout_frac >= 1.0)
        throw std::invalid_argument("config: data.holdout_frac must lie in [0,1)");
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& c) {
    std::string noise_kind = c.noise.kind == NoiseKind::IidGaussian ? "iid"
                             : c.noise.kind == NoiseKind::CorrelatedGaussian ? "correlated"
                                                                             : "heteroscedastic";
    std::string sched = c.loss.schedule == ScheduleMode::Warmup ? "warmup"
                        : c.loss.schedule == ScheduleMode::Zero ? "zero"
                        : c.loss.schedule == ScheduleMode::One  ? "one"
                                                                : "inf";
    std::string clean = c.clean_kind == CleanKind::BandLimited ? "band"
                        : c.clean_kind == CleanKind::Gradient  ? "gradient"
                                                               : "checker";
    std::string corr = c.noise.corr_kh == 3 ? "box3" : "box2";

    std::ostringstream os;
    os << "seed = " << c.seed << "\n"
       << "model.base_width = " << c.model.base_width << "\n"
       << "model.modules_per_branch = " << c.model.modules_per_branch << "\n"
       << "model.branches = " << branches_str(c.model.branch_specs) << "\n"
       << "model.tail_depth = " << c.model.tail_depth << "\n"
       << "model.in_channels = " << c.model.in_channels << "\n"
       << "model.out_channels = " << c.model.out_channels << "\n"
       << "loss.lambda_inv = " << fmt_float(c.loss.lambda_inv) << "\n"
       << "loss.warmup_iters = " << c.loss.warmup_iters << "\n"
       << "loss.rs_stride = " << c.loss.rs_stride << "\n"
       << "loss.blind_stride = " << c.loss.blind_stride << "\n"
       << "loss.blind_downsampler = " << downsampler_name(c.loss.blind_downsampler) << "\n"
       << "loss.inv_downsampler = " << downsampler_name(c.loss.inv_downsampler) << "\n"
       << "loss.schedule = " << sched << "\n"
       << "train.lr0 = " << fmt_float(c.train.lr0) << "\n"
       << "train.lr_halve_every = " << c.train.lr_halve_every << "\n"
       << "train.lr_floor = " << fmt_float(c.train.lr_floor) << "\n"
       << "train.total_iters = " << c.train.total_iters << "\n"
       << "train.batch = " << c.train.batch << "\n"
       << "train.patch = " << c.train.patch << "\n"
       << "train.checkpoint_every = " << c.train.checkpoint_every << "\n"
       << "train.log_every = " << c.train.log_every << "\n"
       << "train.debug_checks = " << (c.train.debug_checks ? "true" : "false") << "\n"
       << "noise.kind = " << noise_kind << "\n"
       << "noise.sigma = " << fmt_float(c.noise.sigma) << "\n"
       << "noise.corr_kernel = " << corr << "\n"
       << "noise.het_a = " << fmt_float(c.noise.het_a) << "\n"
       << "noise.het_b = " << fmt_float(c.noise.het_b) << "\n"
       << "data.count = " << c.data_count << "\n"
       << "data.height = " << c.data_height << "\n"
       << "data.width = " << c.data_width << "\n"
       << "data.channels = " << c.data_channels << "\n"
       << "data.clean_kind = " << clean << "\n"
       << "data.holdout_frac = " << fmt_float(c.holdout_frac) << "\n"
       << "paths.data_dir = " << c.data_dir << "\n"
       << "paths.out_dir = " << c.out_dir << "\n";
    return os.str();
}

}  // namespace cbsn
