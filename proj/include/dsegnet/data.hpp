#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsegnet/tensor.hpp"

namespace dseg {

struct SamplePair {
    std::string id;
    Tensor<float> image;  // (1,3,h,w) in [0,1]
    Tensor<float> mask;   // (1,1,h,w) in {0,1}
};

// Synthetic polyp-like scenes: a smoothed noisy tissue background with one or
// more filled ellipses of brighter, lightly textured tissue. The mask is the
// union of the ellipse interiors.
struct SynthConfig {
    std::size_t count = 200;
    std::size_t h = 64;
    std::size_t w = 64;
    std::size_t min_blobs = 1;
    std::size_t max_blobs = 3;
    // Semi-axis range as a fraction of min(h, w).
    double radius_lo = 0.08;
    double radius_hi = 0.3;
    double noise = 0.08;
    std::size_t smooth = 2;  // box-blur radius applied to the background noise
    double contrast = 0.22;  // blob brightness lift over the background
    std::uint64_t seed = 42;

    // Throws ConfigError for degenerate settings, including radii that would
    // give empty masks or ellipses that cannot fit inside the image.
    void validate() const;
};

std::string synth_id(std::size_t index);

// Sample `index` of the dataset described by cfg; depends only on (cfg, index).
// Image values are already quantized to multiples of 1/255.
SamplePair synth_sample(const SynthConfig& cfg, std::size_t index);

// Writes images/<id>.ppm, masks/<id>.pgm and manifest.txt under out_dir and
// returns the ids in manifest order.
std::vector<std::string> synth_generate(const SynthConfig& cfg, const std::string& out_dir);

enum class ResizeMode { Bilinear, Nearest };

Tensor<float> resize(const Tensor<float>& img, std::size_t h, std::size_t w, ResizeMode mode);

struct SplitSpec {
    enum class Kind { Ratios, Counts };
    Kind kind = Kind::Ratios;
    double train = 0.8, val = 0.1, test = 0.1;
    std::size_t n_train = 0, n_val = 0;  // Counts: the test set takes the remainder
    std::uint64_t seed = 42;

    static SplitSpec ratios(double train, double val, double test, std::uint64_t seed);
    static SplitSpec counts(std::size_t train, std::size_t val, std::uint64_t seed);
    // 880 train, with the remaining 120 of 1000 divided 60/60.
    static SplitSpec kvasir(std::uint64_t seed);
};

struct Split {
    std::vector<std::string> train, val, test;
};

// Seeded Fisher-Yates shuffle, then contiguous partition. Ratio sizes are
// floored for train and val; the remainder goes to test.
Split split_ids(const std::vector<std::string>& ids, const SplitSpec& spec);

std::vector<std::string> read_id_list(const std::string& path);
void write_id_list(const std::vector<std::string>& ids, const std::string& path);

// Loads images/<id>.ppm and masks/<id>.pgm under dir for every id, resizes to
// (h, w) (bilinear image, nearest mask) and binarizes masks at 0.5.
std::vector<SamplePair> load_dataset(const std::string& dir, const std::vector<std::string>& ids, std::size_t h,
                                     std::size_t w);

// Reads <dir>/manifest.txt and loads every listed id.
std::vector<SamplePair> load_dataset(const std::string& dir, std::size_t h, std::size_t w);

}  // namespace dseg
