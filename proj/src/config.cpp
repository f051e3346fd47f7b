#include "dsegnet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dsegnet/error.hpp"

namespace dseg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& expect) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expect);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) bad(key, v, "a number");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) bad(key, v, "a non-negative integer");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad(key, v, "a boolean");
}

template <std::size_t N>
std::array<std::size_t, N> to_list(const std::string& key, const std::string& v) {
    std::array<std::size_t, N> out{};
    std::stringstream ss(v);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i == N) bad(key, v, std::to_string(N) + " comma-separated integers");
        out[i++] = static_cast<std::size_t>(to_u64(key, trim(item)));
    }
    if (i != N) bad(key, v, std::to_string(N) + " comma-separated integers");
    return out;
}

template <std::size_t N>
std::string from_list(const std::array<std::size_t, N>& a) {
    std::string s;
    for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(a[i]);
    return s;
}

struct Entry {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define DSEG_DOUBLE(name, field)                                                                        \
    {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
            [](const RunConfig& c) { return fmt(c.field); }}}
#define DSEG_UINT(name, field)                                                                         \
    {name, {[](RunConfig& c, const std::string& k, const std::string& v) {                            \
                c.field = static_cast<decltype(c.field)>(to_u64(k, v));                               \
            },                                                                                         \
            [](const RunConfig& c) { return std::to_string(c.field); }}}
#define DSEG_BOOL(name, field)                                                                        \
    {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
            [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }}}

const std::vector<std::pair<std::string, Entry>>& table() {
    static const std::vector<std::pair<std::string, Entry>> t = {
        {"preset",
         {[](RunConfig& c, const std::string&, const std::string& v) { c = RunConfig::for_preset(v); },
          [](const RunConfig& c) { return c.model.preset; }}},
        DSEG_UINT("input_h", model.input_h),
        DSEG_UINT("input_w", model.input_w),
        {"encoder_widths",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.encoder_widths = to_list<4>(k, v); },
          [](const RunConfig& c) { return from_list(c.model.encoder_widths); }}},
        {"encoder_blocks",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.encoder_blocks = to_list<3>(k, v); },
          [](const RunConfig& c) { return from_list(c.model.encoder_blocks); }}},
        {"block_style",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "basic") c.model.block_style = BlockStyle::Basic;
              else if (v == "bottleneck") c.model.block_style = BlockStyle::Bottleneck;
              else bad(k, v, "basic or bottleneck");
          },
          [](const RunConfig& c) {
              return std::string(c.model.block_style == BlockStyle::Basic ? "basic" : "bottleneck");
          }}},
        DSEG_UINT("dcp_channels", model.dcp_channels),
        {"decoder_widths",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.decoder_widths = to_list<4>(k, v); },
          [](const RunConfig& c) { return from_list(c.model.decoder_widths); }}},
        DSEG_UINT("cbam_reduction", model.cbam_reduction),
        DSEG_BOOL("use_dcp", model.use_dcp),
        DSEG_BOOL("use_cbam", model.use_cbam),
        DSEG_UINT("model_seed", model_seed),
        DSEG_DOUBLE("lr", train.lr),
        DSEG_UINT("batch_size", train.batch_size),
        DSEG_UINT("max_epochs", train.max_epochs),
        DSEG_DOUBLE("plateau_factor", train.plateau.factor),
        DSEG_UINT("plateau_patience", train.plateau.patience),
        DSEG_DOUBLE("plateau_min_lr", train.plateau.min_lr),
        DSEG_DOUBLE("plateau_min_delta", train.plateau.min_delta),
        DSEG_UINT("early_stop_patience", train.early_stop.patience),
        DSEG_DOUBLE("early_stop_min_delta", train.early_stop.min_delta),
        DSEG_UINT("seed", train.seed),
        DSEG_BOOL("augment", train.augment),
        DSEG_BOOL("aug_hflip", train.augmentation.hflip),
        DSEG_BOOL("aug_vflip", train.augmentation.vflip),
        DSEG_BOOL("aug_rotate", train.augmentation.rotate),
        DSEG_BOOL("aug_dropout", train.augmentation.dropout),
        DSEG_DOUBLE("aug_p", train.augmentation.p),
        DSEG_DOUBLE("aug_max_degrees", train.augmentation.max_degrees),
        DSEG_UINT("aug_max_holes", train.augmentation.max_holes),
        DSEG_DOUBLE("w_dice", train.w_dice),
        DSEG_DOUBLE("w_bce", train.w_bce),
        DSEG_DOUBLE("split_train", split_train),
        DSEG_DOUBLE("split_val", split_val),
        DSEG_DOUBLE("split_test", split_test),
        DSEG_UINT("split_seed", split_seed),
        DSEG_UINT("synth_count", synth.count),
        DSEG_UINT("synth_h", synth.h),
        DSEG_UINT("synth_w", synth.w),
        DSEG_UINT("synth_min_blobs", synth.min_blobs),
        DSEG_UINT("synth_max_blobs", synth.max_blobs),
        DSEG_DOUBLE("synth_radius_lo", synth.radius_lo),
        DSEG_DOUBLE("synth_radius_hi", synth.radius_hi),
        DSEG_DOUBLE("synth_noise", synth.noise),
        DSEG_UINT("synth_smooth", synth.smooth),
        DSEG_DOUBLE("synth_contrast", synth.contrast),
        DSEG_UINT("synth_seed", synth.seed),
        DSEG_DOUBLE("threshold", eval.threshold),
        {"miou_mode",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "foreground") c.eval.miou_mode = MiouMode::ForegroundPerImage;
              else if (v == "mean_of_classes") c.eval.miou_mode = MiouMode::MeanOfClasses;
              else bad(k, v, "foreground or mean_of_classes");
          },
          [](const RunConfig& c) {
              return std::string(c.eval.miou_mode == MiouMode::ForegroundPerImage ? "foreground" : "mean_of_classes");
          }}},
        DSEG_UINT("eval_batch_size", eval.batch_size),
    };
    return t;
}

#undef DSEG_DOUBLE
#undef DSEG_UINT
#undef DSEG_BOOL

const Entry& lookup(const std::string& key) {
    for (const auto& [k, e] : table())
        if (k == key) return e;
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& source) {
    std::vector<std::pair<std::string, std::string>> out;
    std::stringstream ss(text);
    std::string line;
    std::size_t no = 0;
    while (std::getline(ss, line)) {
        ++no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(no) + ": expected 'key = value', got '" + line + "'");
        std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
        if (k.empty()) throw ConfigError(source + ":" + std::to_string(no) + ": empty key");
        out.emplace_back(std::move(k), std::move(v));
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_key_values(ss.str(), path);
}

RunConfig RunConfig::for_preset(const std::string& preset) {
    RunConfig c;
    c.model = ModelConfig::from_preset(preset);
    if (preset == "desk") {
        c.train.lr = 1e-3;
        c.train.max_epochs = 30;
    } else {
        c.train.lr = 1e-4;
        c.train.max_epochs = 200;
        c.synth.h = c.synth.w = 256;
    }
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) { lookup(key).set(*this, key, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return lookup(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& [name, e] : table()) out.push_back(name);
        return out;
    }();
    return k;
}

void RunConfig::apply_file(const std::string& path) {
    for (const auto& [k, v] : read_key_values(path)) {
        // The preset only seeds defaults; see preset_in_file.
        if (k == "preset") {
            ModelConfig::from_preset(v);
            continue;
        }
        try {
            set(k, v);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ": " + e.what());
        }
    }
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    synth.validate();
    if (split_train < 0 || split_val < 0 || split_test < 0 ||
        std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
        throw ConfigError("split ratios must be non-negative and sum to 1");
    if (!(eval.threshold > 0 && eval.threshold < 1)) throw ConfigError("threshold must lie in (0,1)");
}

std::string RunConfig::resolved() const {
    std::string out;
    for (const auto& [k, e] : table()) out += k + " = " + e.get(*this) + "\n";
    return out;
}

void RunConfig::write_resolved(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << resolved();
}

std::string preset_in_file(const std::string& path, const std::string& fallback) {
    std::string preset = fallback;
    for (const auto& [k, v] : read_key_values(path))
        if (k == "preset") preset = v;
    return preset;
}

}  // namespace dseg
