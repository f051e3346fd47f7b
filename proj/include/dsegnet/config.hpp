#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dsegnet/data.hpp"
#include "dsegnet/eval.hpp"
#include "dsegnet/model.hpp"
#include "dsegnet/training.hpp"

namespace dseg {

// Ordered `key = value` lines. '#' starts a comment; blank lines are skipped.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& source);
std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path);

// Every tunable of a run under one flat key namespace.
struct RunConfig {
    ModelConfig model;
    std::uint64_t model_seed = 42;
    TrainConfig train;
    double split_train = 0.8, split_val = 0.1, split_test = 0.1;
    std::uint64_t split_seed = 42;
    SynthConfig synth;
    EvalOptions eval;

    static RunConfig for_preset(const std::string& preset);

    // Throws ConfigError naming the key for unknown keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static const std::vector<std::string>& keys();

    // Applies a config file's entries in order; errors name file and line.
    void apply_file(const std::string& path);
    void validate() const;

    // One `key = value` line per key in keys() order.
    std::string resolved() const;
    void write_resolved(const std::string& path) const;
};

// The preset named in a config file, if any, so it can seed the defaults
// before the file's other keys are applied.
std::string preset_in_file(const std::string& path, const std::string& fallback);

}  // namespace dseg
