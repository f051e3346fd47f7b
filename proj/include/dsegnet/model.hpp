#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dsegnet/layers.hpp"

namespace dseg {

struct ModelConfig {
    std::size_t input_h = 64;
    std::size_t input_w = 64;
    std::array<std::size_t, 4> encoder_widths{16, 32, 64, 128};
    std::array<std::size_t, 3> encoder_blocks{1, 1, 1};
    BlockStyle block_style = BlockStyle::Basic;
    std::size_t dcp_channels = 16;
    std::array<std::size_t, 4> decoder_widths{64, 32, 16, 8};
    std::size_t cbam_reduction = 4;
    bool use_dcp = true;
    bool use_cbam = true;
    std::string preset = "desk";

    static ModelConfig desk();
    static ModelConfig paper();
    static ModelConfig from_preset(const std::string& name);

    // Throws ConfigError describing the first violated constraint.
    void validate() const;
};

// Throws DimensionError unless x is (n,3,h,w) with h,w multiples of 32 and >= 64.
void check_model_input(const Shape& x);

template <typename T>
struct ForwardResult {
    Var<T> mask;        // (n,1,h,w) probabilities
    Var<T> bottleneck;  // fusion conv activation, (n, 4*dcp, h/32, w/32)
    std::array<Var<T>, 4> features;
    std::array<Var<T>, 4> pyramid;  // pooled DCP (or plain) outputs
};

// Layer shapes visited by a symbolic trace, for reports and tests.
struct TraceResult {
    MacTally tally;
    Shape mask;
    Shape bottleneck;
    std::array<Shape, 4> features;
    std::array<Shape, 4> pyramid;
};

template <typename T>
class DilatedSegNet {
public:
    // Parameters are Kaiming-initialized from `seed`.
    explicit DilatedSegNet(const ModelConfig& config, std::uint64_t seed = 0);

    ForwardResult<T> forward(const Var<T>& x, Mode mode);
    // Eval-mode forward without graph construction; returns mask probabilities.
    Tensor<T> predict(const Tensor<T>& x);

    // Replays the architecture on shapes only.
    TraceResult trace(const Shape& input) const;

    const ModelConfig& config() const { return config_; }
    ParamRegistry<T>& registry() { return *reg_; }
    const ParamRegistry<T>& registry() const { return *reg_; }
    // Activation of the bottleneck fusion layer from the most recent forward.
    const Tensor<T>& last_bottleneck() const { return last_bottleneck_; }

private:
    ModelConfig config_;
    RegistryPtr<T> reg_;
    ConvBn<T> stem_;
    std::vector<ResidualBlock<T>> stage2_, stage3_, stage4_;
    std::vector<DcpBlock<T>> dcp_;
    std::vector<PlainPoolBlock<T>> plain_;
    ConvBn<T> fusion_;
    std::vector<DecoderBlock<T>> decoders_;
    Conv2d<T> head_;
    Tensor<T> last_bottleneck_;
};

// Kaiming-normal conv weights (std sqrt(2/fan_in)), zero biases, unit gamma,
// zero beta, running mean 0 and variance 1. Marks statistics ready.
template <typename T>
void init_params(ParamRegistry<T>& reg, std::uint64_t seed);

// Trainable scalar count.
template <typename T>
std::uint64_t count_params(const ParamRegistry<T>& reg);

// Trainable scalars whose name contains `fragment`.
template <typename T>
std::uint64_t count_params_matching(const ParamRegistry<T>& reg, const std::string& fragment);

// Multiply-accumulates for one forward pass at the given input shape.
std::uint64_t count_macs(const ModelConfig& config, const Shape& input);

}  // namespace dseg
