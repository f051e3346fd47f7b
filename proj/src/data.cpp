#include "dsegnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "dsegnet/error.hpp"
#include "dsegnet/kernels.hpp"
#include "dsegnet/netpbm.hpp"
#include "dsegnet/rng.hpp"

namespace dseg {
namespace fs = std::filesystem;

void SynthConfig::validate() const {
    if (count == 0 || h == 0 || w == 0) throw ConfigError("synth: count and size must be positive");
    if (min_blobs == 0 || max_blobs < min_blobs) throw ConfigError("synth: need 1 <= min_blobs <= max_blobs");
    if (!(radius_lo > 0) || radius_hi < radius_lo) throw ConfigError("synth: need 0 < radius_lo <= radius_hi");
    if (radius_hi >= 0.5) throw ConfigError("synth: radius_hi must be < 0.5 so ellipses fit inside the image");
    if (radius_lo * static_cast<double>(std::min(h, w)) < 1.5) {
        throw ConfigError("synth: radius_lo gives ellipses under 1.5 px, masks could be empty");
    }
    if (noise < 0 || contrast <= 0) throw ConfigError("synth: noise must be >= 0 and contrast > 0");
}

std::string synth_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%04zu", index);
    return buf;
}

namespace {

// Separable box blur with clamped borders.
void box_blur(std::vector<double>& plane, std::size_t h, std::size_t w, std::size_t r) {
    if (r == 0) return;
    std::vector<double> tmp(plane.size());
    const auto ri = static_cast<long>(r);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0;
            for (long d = -ri; d <= ri; ++d) {
                const long xx = std::clamp(static_cast<long>(x) + d, 0L, static_cast<long>(w) - 1);
                s += plane[y * w + static_cast<std::size_t>(xx)];
            }
            tmp[y * w + x] = s / static_cast<double>(2 * r + 1);
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0;
            for (long d = -ri; d <= ri; ++d) {
                const long yy = std::clamp(static_cast<long>(y) + d, 0L, static_cast<long>(h) - 1);
                s += tmp[static_cast<std::size_t>(yy) * w + x];
            }
            plane[y * w + x] = s / static_cast<double>(2 * r + 1);
        }
}

struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t;

    // Normalized radius of point (x, y); < 1 inside.
    double rho2(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double u = dx * cos_t + dy * sin_t;
        const double v = -dx * sin_t + dy * cos_t;
        return (u * u) / (a * a) + (v * v) / (b * b);
    }
};

}  // namespace

SamplePair synth_sample(const SynthConfig& cfg, std::size_t index) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, index));
    const std::size_t h = cfg.h, w = cfg.w;
    const double m = static_cast<double>(std::min(h, w));

    const double base[3] = {0.62 + rng.uniform(-0.06, 0.06), 0.36 + rng.uniform(-0.06, 0.06),
                            0.30 + rng.uniform(-0.05, 0.05)};
    std::vector<double> lum(h * w);
    for (auto& v : lum) v = cfg.noise * 2.5 * rng.normal();
    box_blur(lum, h, w, cfg.smooth);

    const auto blobs = static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(cfg.min_blobs),
                                                          static_cast<std::int64_t>(cfg.max_blobs)));
    std::vector<Ellipse> ellipses;
    for (std::size_t k = 0; k < blobs; ++k) {
        Ellipse e{};
        e.a = rng.uniform(cfg.radius_lo, cfg.radius_hi) * m;
        e.b = rng.uniform(cfg.radius_lo, cfg.radius_hi) * m;
        const double theta = rng.uniform(0.0, std::numbers::pi);
        e.cos_t = std::cos(theta);
        e.sin_t = std::sin(theta);
        // Axis-aligned half extents of the rotated ellipse keep it inside the frame.
        const double ex = std::sqrt(e.a * e.a * e.cos_t * e.cos_t + e.b * e.b * e.sin_t * e.sin_t);
        const double ey = std::sqrt(e.a * e.a * e.sin_t * e.sin_t + e.b * e.b * e.cos_t * e.cos_t);
        e.cx = rng.uniform(ex, static_cast<double>(w) - ex);
        e.cy = rng.uniform(ey, static_cast<double>(h) - ey);
        ellipses.push_back(e);
    }
    const double lift = cfg.contrast * rng.uniform(0.85, 1.15);
    const double tint[3] = {1.0, 0.85, 0.55};
    const double freq = rng.uniform(0.4, 0.9), phase = rng.uniform(0.0, 2 * std::numbers::pi);

    SamplePair s{synth_id(index), Tensor<float>(Shape{1, 3, h, w}), Tensor<float>(Shape{1, 1, h, w})};
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            double inside = 1e9;
            for (const auto& e : ellipses) inside = std::min(inside, e.rho2(px, py));
            double add = 0;
            if (inside < 1.0) {
                s.mask.at(0, 0, y, x) = 1.0f;
                // Brighter toward the middle, with a faint ripple texture.
                add = lift * (0.75 + 0.25 * (1.0 - inside)) +
                      0.03 * std::sin(freq * px + phase) * std::cos(freq * py - phase);
            }
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = base[c] + lum[y * w + x] + add * tint[c];
                s.image.at(0, c, y, x) = static_cast<float>(to_byte(static_cast<float>(v))) / 255.0f;
            }
        }
    }
    return s;
}

std::vector<std::string> synth_generate(const SynthConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    fs::create_directories(root / "masks", ec);
    if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < cfg.count; ++i) {
        const SamplePair s = synth_sample(cfg, i);
        write_ppm(s.image, (root / "images" / (s.id + ".ppm")).string());
        write_pgm(s.mask, (root / "masks" / (s.id + ".pgm")).string());
        ids.push_back(s.id);
    }
    write_id_list(ids, (root / "manifest.txt").string());
    return ids;
}

Tensor<float> resize(const Tensor<float>& img, std::size_t h, std::size_t w, ResizeMode mode) {
    return mode == ResizeMode::Bilinear ? kernels::bilinear_resize(img, h, w) : kernels::nearest_resize(img, h, w);
}

SplitSpec SplitSpec::ratios(double train, double val, double test, std::uint64_t seed) {
    SplitSpec s;
    s.kind = Kind::Ratios;
    s.train = train;
    s.val = val;
    s.test = test;
    s.seed = seed;
    return s;
}

SplitSpec SplitSpec::counts(std::size_t train, std::size_t val, std::uint64_t seed) {
    SplitSpec s;
    s.kind = Kind::Counts;
    s.n_train = train;
    s.n_val = val;
    s.seed = seed;
    return s;
}

SplitSpec SplitSpec::kvasir(std::uint64_t seed) { return counts(880, 60, seed); }

Split split_ids(const std::vector<std::string>& ids, const SplitSpec& spec) {
    const std::size_t n = ids.size();
    if (n < 3) throw ConfigError("split: need at least 3 ids, got " + std::to_string(n));
    std::size_t n_train = 0, n_val = 0;
    if (spec.kind == SplitSpec::Kind::Ratios) {
        if (spec.train < 0 || spec.val < 0 || spec.test < 0 ||
            std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
            throw ConfigError("split: ratios must be non-negative and sum to 1");
        }
        // The small lift absorbs representation error such as 0.1 * 200 = 19.999...
        n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n) + 1e-9));
        n_val = static_cast<std::size_t>(std::floor(spec.val * static_cast<double>(n) + 1e-9));
    } else {
        if (spec.n_train + spec.n_val > n) {
            throw ConfigError("split: counts " + std::to_string(spec.n_train) + "+" + std::to_string(spec.n_val) +
                              " exceed " + std::to_string(n) + " ids");
        }
        n_train = spec.n_train;
        n_val = spec.n_val;
    }
    std::vector<std::string> order = ids;
    Rng rng(spec.seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<long>(n_train));
    s.val.assign(order.begin() + static_cast<long>(n_train), order.begin() + static_cast<long>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<long>(n_train + n_val), order.end());
    return s;
}

std::vector<std::string> read_id_list(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open id list '" + path + "'");
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

void write_id_list(const std::vector<std::string>& ids, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& id : ids) f << id << '\n';
}

std::vector<SamplePair> load_dataset(const std::string& dir, const std::vector<std::string>& ids, std::size_t h,
                                     std::size_t w) {
    const fs::path root(dir);
    std::vector<SamplePair> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const fs::path img = root / "images" / (id + ".ppm");
        const fs::path msk = root / "masks" / (id + ".pgm");
        if (!fs::exists(img)) throw IoError("sample '" + id + "': missing image " + img.string());
        if (!fs::exists(msk)) throw IoError("sample '" + id + "': missing mask " + msk.string());
        SamplePair s{id, read_ppm(img.string()), read_pgm(msk.string())};
        if (s.image.shape().h != s.mask.shape().h || s.image.shape().w != s.mask.shape().w) {
            throw DimensionError("sample '" + id + "': image " + s.image.shape().str() + " vs mask " +
                                 s.mask.shape().str());
        }
        if (s.image.shape().h != h || s.image.shape().w != w) {
            s.image = resize(s.image, h, w, ResizeMode::Bilinear);
            s.mask = resize(s.mask, h, w, ResizeMode::Nearest);
        }
        for (auto& v : s.mask.data()) v = v >= 0.5f ? 1.0f : 0.0f;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<SamplePair> load_dataset(const std::string& dir, std::size_t h, std::size_t w) {
    return load_dataset(dir, read_id_list((fs::path(dir) / "manifest.txt").string()), h, w);
}

}  // namespace dseg
