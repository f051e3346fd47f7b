#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "dsegnet/data.hpp"
#include "dsegnet/error.hpp"
#include "dsegnet/netpbm.hpp"
#include "dsegnet/rng.hpp"

namespace dseg {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "dsegnet_data_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<char> bytes_of(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void put_bytes(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

NetpbmError::Kind pgm_error(const fs::path& p) {
    try {
        read_pgm(p.string());
    } catch (const NetpbmError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "read succeeded";
    return NetpbmError::Kind::Open;
}

TEST(Netpbm, PpmHeaderBytes) {
    const auto dir = fresh_dir("hdr");
    Tensor<float> img(Shape{1, 3, 2, 2});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(i) / 11.0f;
    write_ppm(img, (dir / "a.ppm").string());
    const auto b = bytes_of(dir / "a.ppm");
    const std::string header = "P6\n2 2\n255\n";
    ASSERT_EQ(b.size(), header.size() + 12);
    EXPECT_EQ(std::string(b.begin(), b.begin() + static_cast<long>(header.size())), header);
    // Interleaved RGB: pixel (0,0) is channels 0,1,2 of plane offset 0.
    EXPECT_EQ(static_cast<unsigned char>(b[header.size() + 1]), to_byte(img.at(0, 1, 0, 0)));
}

TEST(Netpbm, EveryByteValueSurvives) {
    for (int v = 0; v < 256; ++v) EXPECT_EQ(to_byte(static_cast<float>(v) / 255.0f), v);
}

TEST(Netpbm, FuzzRoundTripIsByteIdentical) {
    const auto dir = fresh_dir("fuzz");
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const auto h = static_cast<std::size_t>(rng.range(1, 17)), w = static_cast<std::size_t>(rng.range(1, 17));
        const bool color = i % 2 == 0;
        Tensor<float> t(Shape{1, color ? 3u : 1u, h, w});
        for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-0.2, 1.2));
        const auto a = dir / ("a" + std::to_string(i));
        const auto b = dir / ("b" + std::to_string(i));
        if (color) {
            write_ppm(t, a.string());
            write_ppm(read_ppm(a.string()), b.string());
        } else {
            write_pgm(t, a.string());
            write_pgm(read_pgm(a.string()), b.string());
        }
        ASSERT_EQ(bytes_of(a), bytes_of(b)) << i;
    }
}

TEST(Netpbm, MaskScaling) {
    const auto dir = fresh_dir("mask");
    put_bytes(dir / "m.pgm", std::string("P5\n3 1\n255\n") + '\0' + '\xff' + '\0');
    const auto m = read_pgm((dir / "m.pgm").string());
    EXPECT_EQ(m.shape(), (Shape{1, 1, 1, 3}));
    EXPECT_EQ(m[0], 0.0f);
    EXPECT_EQ(m[1], 1.0f);
    EXPECT_EQ(m[2], 0.0f);
}

TEST(Netpbm, HeaderCommentsAccepted) {
    const auto dir = fresh_dir("comment");
    put_bytes(dir / "c.pgm", std::string("P5\n# made by hand\n1 1\n255\n") + '\x80');
    EXPECT_FLOAT_EQ(read_pgm((dir / "c.pgm").string())[0], 128.0f / 255.0f);
}

TEST(Netpbm, DistinctErrors) {
    using K = NetpbmError::Kind;
    const auto dir = fresh_dir("errors");
    put_bytes(dir / "magic.pgm", "P2\n1 1\n255\n0");
    put_bytes(dir / "maxval.pgm", std::string("P5\n1 1\n65535\n") + "ab");
    put_bytes(dir / "trunc.pgm", std::string("P5\n4 4\n255\n") + "abc");
    put_bytes(dir / "hdr.pgm", "P5\n4");
    EXPECT_EQ(pgm_error(dir / "magic.pgm"), K::BadMagic);
    EXPECT_EQ(pgm_error(dir / "maxval.pgm"), K::BadMaxval);
    EXPECT_EQ(pgm_error(dir / "trunc.pgm"), K::Truncated);
    EXPECT_EQ(pgm_error(dir / "hdr.pgm"), K::Truncated);
    EXPECT_EQ(pgm_error(dir / "missing.pgm"), K::Open);
    EXPECT_THROW(read_ppm((dir / "trunc.pgm").string()), NetpbmError);
}

TEST(Synth, DeterministicFiles) {
    SynthConfig cfg;
    cfg.count = 6;
    const auto a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
    synth_generate(cfg, a.string());
    synth_generate(cfg, b.string());
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        EXPECT_EQ(bytes_of(e.path()), bytes_of(b / fs::relative(e.path(), a))) << e.path();
    }
    cfg.seed = 43;
    const auto c = fresh_dir("synth_c");
    synth_generate(cfg, c.string());
    EXPECT_NE(bytes_of(a / "images" / "synth_0000.ppm"), bytes_of(c / "images" / "synth_0000.ppm"));
}

TEST(Synth, CountMatchesFilesAndManifest) {
    SynthConfig cfg;
    cfg.count = 100;
    cfg.h = cfg.w = 32;
    const auto dir = fresh_dir("count");
    const auto ids = synth_generate(cfg, dir.string());
    EXPECT_EQ(ids.size(), 100u);
    EXPECT_EQ(read_id_list((dir / "manifest.txt").string()).size(), 100u);
    std::size_t images = 0, masks = 0;
    for (const auto& e : fs::directory_iterator(dir / "images")) images += e.path().extension() == ".ppm";
    for (const auto& e : fs::directory_iterator(dir / "masks")) masks += e.path().extension() == ".pgm";
    EXPECT_EQ(images, 100u);
    EXPECT_EQ(masks, 100u);
}

TEST(Synth, ForegroundFractionWithinEllipseAreaBounds) {
    for (std::size_t size : {64, 96}) {
        SynthConfig cfg;
        cfg.h = cfg.w = size;
        const double m = static_cast<double>(size), area = m * m;
        // One ellipse at the smallest semi-axes up to max_blobs at the largest,
        // widened by a one-pixel band along each boundary for rasterization.
        const double r_lo = cfg.radius_lo * m, r_hi = cfg.radius_hi * m;
        const double lo = (std::numbers::pi * r_lo * r_lo - 2 * std::numbers::pi * r_lo) / area;
        const double hi = static_cast<double>(cfg.max_blobs) *
                          (std::numbers::pi * r_hi * r_hi + 2 * std::numbers::pi * r_hi) / area;
        for (std::size_t i = 0; i < 100; ++i) {
            const auto s = synth_sample(cfg, i);
            double fg = 0;
            for (float v : s.mask.data()) {
                ASSERT_TRUE(v == 0.0f || v == 1.0f);
                fg += v;
            }
            const double frac = fg / area;
            EXPECT_GE(frac, lo) << s.id;
            EXPECT_LE(frac, hi) << s.id;
            for (float v : s.image.data()) {
                ASSERT_GE(v, 0.0f);
                ASSERT_LE(v, 1.0f);
            }
        }
    }
}

TEST(Synth, DegenerateConfigRejected) {
    SynthConfig cfg;
    cfg.radius_lo = 0.01;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.max_blobs = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.radius_hi = 0.6;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Resize, ConstantStaysConstant) {
    const auto img = Tensor<float>::full(Shape{1, 3, 20, 30}, 0.375f);
    for (auto mode : {ResizeMode::Bilinear, ResizeMode::Nearest}) {
        const auto r = resize(img, 7, 45, mode);
        EXPECT_EQ(r.shape(), (Shape{1, 3, 7, 45}));
        for (float v : r.data()) ASSERT_EQ(v, 0.375f);
    }
}

TEST(Resize, HalvingExtentsAndBinaryMask) {
    Tensor<float> mask(Shape{1, 1, 512, 512});
    Rng rng(1);
    for (auto& v : mask.data()) v = rng.bernoulli(0.3) ? 1.0f : 0.0f;
    const auto r = resize(mask, 256, 256, ResizeMode::Nearest);
    EXPECT_EQ(r.shape(), (Shape{1, 1, 256, 256}));
    for (float v : r.data()) ASSERT_TRUE(v == 0.0f || v == 1.0f);
    EXPECT_EQ(resize(Tensor<float>(Shape{1, 3, 512, 512}), 256, 256, ResizeMode::Bilinear).shape(),
              (Shape{1, 3, 256, 256}));
}

std::vector<std::string> make_ids(std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(synth_id(i));
    return ids;
}

TEST(Split, RatioAndPresetCounts) {
    const auto ids = make_ids(1000);
    const auto r = split_ids(ids, SplitSpec::ratios(0.8, 0.1, 0.1, 1));
    EXPECT_EQ(r.train.size(), 800u);
    EXPECT_EQ(r.val.size(), 100u);
    EXPECT_EQ(r.test.size(), 100u);
    const auto k = split_ids(ids, SplitSpec::kvasir(1));
    EXPECT_EQ(k.train.size(), 880u);
    EXPECT_EQ(k.val.size(), 60u);
    EXPECT_EQ(k.test.size(), 60u);
    const auto d = split_ids(make_ids(200), SplitSpec::ratios(0.8, 0.1, 0.1, 42));
    EXPECT_EQ(d.train.size(), 160u);
    EXPECT_EQ(d.val.size(), 20u);
    EXPECT_EQ(d.test.size(), 20u);
}

TEST(Split, DisjointAndExhaustive) {
    const auto ids = make_ids(137);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = split_ids(ids, SplitSpec::ratios(0.7, 0.2, 0.1, seed));
        std::multiset<std::string> all;
        for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
        ASSERT_EQ(all.size(), ids.size());
        ASSERT_EQ(std::set<std::string>(all.begin(), all.end()), std::set<std::string>(ids.begin(), ids.end()));
    }
}

TEST(Split, SeedDeterminism) {
    const auto ids = make_ids(100);
    const auto ref = split_ids(ids, SplitSpec::ratios(0.8, 0.1, 0.1, 0)).train;
    EXPECT_EQ(split_ids(ids, SplitSpec::ratios(0.8, 0.1, 0.1, 0)).train, ref);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        EXPECT_NE(split_ids(ids, SplitSpec::ratios(0.8, 0.1, 0.1, seed)).train, ref) << seed;
    }
}

TEST(Split, Errors) {
    EXPECT_THROW(split_ids(make_ids(10), SplitSpec::ratios(0.8, 0.1, 0.2, 0)), ConfigError);
    EXPECT_THROW(split_ids(make_ids(10), SplitSpec::counts(8, 3, 0)), ConfigError);
    EXPECT_THROW(split_ids(make_ids(2), SplitSpec::ratios(0.8, 0.1, 0.1, 0)), ConfigError);
}

TEST(Dataset, LoadResizesAndBinarizes) {
    SynthConfig cfg;
    cfg.count = 5;
    cfg.h = cfg.w = 96;
    const auto dir = fresh_dir("load");
    synth_generate(cfg, dir.string());
    const auto samples = load_dataset(dir.string(), 64, 64);
    ASSERT_EQ(samples.size(), 5u);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        EXPECT_EQ(samples[i].id, synth_id(i));
        EXPECT_EQ(samples[i].image.shape(), (Shape{1, 3, 64, 64}));
        EXPECT_EQ(samples[i].mask.shape(), (Shape{1, 1, 64, 64}));
        for (float v : samples[i].mask.data()) ASSERT_TRUE(v == 0.0f || v == 1.0f);
    }
}

TEST(Dataset, InMemorySampleMatchesDisk) {
    SynthConfig cfg;
    cfg.count = 3;
    const auto dir = fresh_dir("match");
    synth_generate(cfg, dir.string());
    const auto loaded = load_dataset(dir.string(), cfg.h, cfg.w);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto s = synth_sample(cfg, i);
        EXPECT_TRUE(s.image.bitwise_equal(loaded[i].image));
        EXPECT_TRUE(s.mask.bitwise_equal(loaded[i].mask));
    }
}

TEST(Dataset, MissingMaskNamesId) {
    SynthConfig cfg;
    cfg.count = 3;
    const auto dir = fresh_dir("missing");
    synth_generate(cfg, dir.string());
    fs::remove(dir / "masks" / "synth_0001.pgm");
    try {
        load_dataset(dir.string(), 64, 64);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("synth_0001"), std::string::npos);
    }
}

}  // namespace
}  // namespace dseg
