#pragma once

// Parameterized building blocks. Every layer registers its tensors in a shared
// ParamRegistry under a dot-separated path, runs a differentiable forward, and
// can replay its structure symbolically (trace) to count multiply-accumulates
// without touching data.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dsegnet/ops.hpp"

namespace dseg {

enum class ParamRole { ConvWeight, ConvBias, BnGamma, BnBeta, BnRunningMean, BnRunningVar };

template <typename T>
struct Parameter {
    std::string name;
    Var<T> var;
    ParamRole role;
    bool trainable;
    std::vector<std::uint32_t> dims;  // logical dims as stored in weight files
    std::size_t fan_in = 0;           // conv weights only
};

template <typename T>
class ParamRegistry {
public:
    // Throws ConfigError on a duplicate name.
    Var<T> add(const std::string& name, Shape storage, std::vector<std::uint32_t> dims, ParamRole role,
               std::size_t fan_in = 0);

    const std::vector<Parameter<T>>& params() const { return params_; }
    std::vector<Parameter<T>>& params() { return params_; }
    const Parameter<T>* find(const std::string& name) const;
    std::vector<Var<T>> trainable() const;
    void zero_grad();

    // Batch-norm running statistics are valid once initialized, loaded, or
    // updated by a train-mode forward.
    bool stats_ready() const { return stats_ready_; }
    void set_stats_ready(bool ready) { stats_ready_ = ready; }

private:
    std::vector<Parameter<T>> params_;
    bool stats_ready_ = false;
};

template <typename T>
using RegistryPtr = std::shared_ptr<ParamRegistry<T>>;

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
    return prefix.empty() ? leaf : prefix + "." + leaf;
}

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamRegistry<T>& reg, const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
           ConvGeometry geometry, bool bias);

    Var<T> forward(const Var<T>& x) const;
    Shape trace(const Shape& in, MacTally& tally) const;
    std::size_t out_channels() const { return out_ch_; }
    const Var<T>& weight() const { return weight_; }

private:
    Var<T> weight_;
    Var<T> bias_;
    ConvGeometry geometry_{};
    std::size_t out_ch_ = 0;
};

template <typename T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(RegistryPtr<T> reg, const std::string& name, std::size_t channels);

    Var<T> forward(const Var<T>& x, Mode mode) const;
    Shape trace(const Shape& in, MacTally& tally) const;

private:
    RegistryPtr<T> reg_;
    Var<T> gamma_, beta_, running_mean_, running_var_;
};

// conv → BN → optional ReLU; the unit used by the stem, DCP branches, and fusion.
template <typename T>
class ConvBn {
public:
    ConvBn() = default;
    ConvBn(RegistryPtr<T> reg, const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
           ConvGeometry geometry, bool relu);

    Var<T> forward(const Var<T>& x, Mode mode) const;
    Shape trace(const Shape& in, MacTally& tally) const;
    std::size_t out_channels() const { return conv_.out_channels(); }

private:
    Conv2d<T> conv_;
    BatchNorm2d<T> bn_;
    bool relu_ = true;
};

enum class BlockStyle { Basic, Bottleneck };

// Basic: conv3x3(s)-BN-ReLU-conv3x3-BN. Bottleneck: 1x1 reduce, 3x3(s), 1x1
// expand (out/4 inner width). Shortcut is identity, or 1x1 conv+BN when the
// channel count or stride changes. Output is ReLU(main + shortcut).
template <typename T>
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(RegistryPtr<T> reg, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                  std::size_t stride, BlockStyle style);

    Var<T> forward(const Var<T>& x, Mode mode) const;
    Shape trace(const Shape& in, MacTally& tally) const;
    std::size_t out_channels() const { return out_ch_; }

private:
    std::vector<ConvBn<T>> main_;
    std::optional<ConvBn<T>> shortcut_;
    std::size_t out_ch_ = 0;
};

// Channel attention (shared 1x1-conv MLP over avg- and max-pooled
// descriptors) followed by spatial attention (7x7 conv over channel-wise avg
// and max maps).
template <typename T>
class Cbam {
public:
    struct Result {
        Var<T> out;
        Var<T> channel_weights;  // (n,c,1,1)
        Var<T> spatial_weights;  // (n,1,h,w)
    };

    Cbam() = default;
    Cbam(ParamRegistry<T>& reg, const std::string& name, std::size_t channels, std::size_t reduction);

    Var<T> forward(const Var<T>& x) const { return forward_detailed(x).out; }
    Result forward_detailed(const Var<T>& x) const;
    Shape trace(const Shape& in, MacTally& tally) const;

private:
    Conv2d<T> mlp_reduce_, mlp_expand_, spatial_;
};

// Four parallel dilated 3x3 conv-BN-ReLU branches (rates 1, 3, 6, 9, padding
// equal to the rate), concatenation, 1x1 conv-BN-ReLU back to `out_ch`, then
// max pooling with kernel = stride = `pool`.
template <typename T>
class DcpBlock {
public:
    static constexpr std::array<std::size_t, 4> kDilations{1, 3, 6, 9};

    DcpBlock() = default;
    DcpBlock(RegistryPtr<T> reg, const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t pool);

    Var<T> forward(const Var<T>& x, Mode mode) const;
    Shape trace(const Shape& in, MacTally& tally) const;

private:
    void check_extent(const Shape& in) const;
    std::vector<ConvBn<T>> branches_;
    ConvBn<T> fuse_;
    std::size_t pool_ = 1;
};

// Replacement for a DCP block in the "without DCP" ablation: a single 3x3
// conv-BN-ReLU followed by the same pooling.
template <typename T>
class PlainPoolBlock {
public:
    PlainPoolBlock() = default;
    PlainPoolBlock(RegistryPtr<T> reg, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                   std::size_t pool);

    Var<T> forward(const Var<T>& x, Mode mode) const;
    Shape trace(const Shape& in, MacTally& tally) const;

private:
    ConvBn<T> conv_;
    std::size_t pool_ = 1;
};

// Bilinear x2 upsample, concat with the skip, two residual blocks (the first
// maps to `out_ch`), then CBAM unless disabled.
template <typename T>
class DecoderBlock {
public:
    DecoderBlock() = default;
    DecoderBlock(RegistryPtr<T> reg, const std::string& name, std::size_t in_ch, std::size_t skip_ch,
                 std::size_t out_ch, bool use_cbam, std::size_t reduction);

    Var<T> forward(const Var<T>& x, const Var<T>& skip, Mode mode) const;
    Shape trace(const Shape& in, const Shape& skip, MacTally& tally) const;
    std::size_t out_channels() const { return out_ch_; }

private:
    ResidualBlock<T> res1_, res2_;
    std::optional<Cbam<T>> cbam_;
    std::size_t out_ch_ = 0;
};

}  // namespace dseg
