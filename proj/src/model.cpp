#include "dsegnet/model.hpp"

#include <cmath>

#include "dsegnet/error.hpp"
#include "dsegnet/rng.hpp"

namespace dseg {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
    ModelConfig c;
    c.input_h = c.input_w = 256;
    c.encoder_widths = {64, 256, 512, 1024};
    c.encoder_blocks = {3, 4, 6};
    c.block_style = BlockStyle::Bottleneck;
    c.dcp_channels = 64;
    c.decoder_widths = {128, 128, 128, 128};
    c.cbam_reduction = 16;
    c.preset = "paper";
    return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

void ModelConfig::validate() const {
    if (input_h % 32 != 0 || input_w % 32 != 0 || input_h < 64 || input_w < 64) {
        throw ConfigError("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                          " must be multiples of 32 and at least 64");
    }
    for (std::size_t w : encoder_widths)
        if (w == 0) throw ConfigError("encoder widths must be >= 1");
    for (std::size_t w : decoder_widths)
        if (w == 0) throw ConfigError("decoder widths must be >= 1");
    for (std::size_t b : encoder_blocks)
        if (b == 0) throw ConfigError("encoder block counts must be >= 1");
    if (dcp_channels == 0) throw ConfigError("dcp_channels must be >= 1");
    if (cbam_reduction == 0) throw ConfigError("cbam_reduction must be >= 1");
    if (use_cbam) {
        for (std::size_t w : decoder_widths) {
            if (w < cbam_reduction) {
                throw ConfigError("reduction ratio exceeds channels: decoder width " + std::to_string(w) +
                                  " < r=" + std::to_string(cbam_reduction));
            }
        }
    }
    if (block_style == BlockStyle::Bottleneck) {
        for (std::size_t i = 1; i < 4; ++i)
            if (encoder_widths[i] % 4 != 0) throw ConfigError("bottleneck stage widths must be divisible by 4");
    }
}

void check_model_input(const Shape& x) {
    if (x.c != 3 || x.n == 0 || x.h % 32 != 0 || x.w % 32 != 0 || x.h < 64 || x.w < 64) {
        throw DimensionError("model input " + x.str() + " must be (n,3,h,w) with h,w multiples of 32 and >= 64");
    }
}

template <typename T>
DilatedSegNet<T>::DilatedSegNet(const ModelConfig& config, std::uint64_t seed)
    : config_(config), reg_(std::make_shared<ParamRegistry<T>>()) {
    config_.validate();
    const auto& ew = config_.encoder_widths;
    const auto& dw = config_.decoder_widths;
    const auto style = config_.block_style;

    stem_ = ConvBn<T>(reg_, "encoder.stem", 3, ew[0], 7, ConvGeometry{2, 3, 1}, true);
    auto build_stage = [&](std::vector<ResidualBlock<T>>& stage, const std::string& name, std::size_t in,
                           std::size_t out, std::size_t stride, std::size_t blocks) {
        for (std::size_t b = 0; b < blocks; ++b) {
            stage.emplace_back(reg_, name + ".block" + std::to_string(b), b == 0 ? in : out, out, b == 0 ? stride : 1,
                               style);
        }
    };
    build_stage(stage2_, "encoder.stage2", ew[0], ew[1], 1, config_.encoder_blocks[0]);
    build_stage(stage3_, "encoder.stage3", ew[1], ew[2], 2, config_.encoder_blocks[1]);
    build_stage(stage4_, "encoder.stage4", ew[2], ew[3], 2, config_.encoder_blocks[2]);

    for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t pool = std::size_t{1} << (4 - k);
        const std::string name = "dcp" + std::to_string(k + 1);
        if (config_.use_dcp) {
            dcp_.emplace_back(reg_, name, ew[k], config_.dcp_channels, pool);
        } else {
            plain_.emplace_back(reg_, name, ew[k], config_.dcp_channels, pool);
        }
    }
    const std::size_t bottleneck = 4 * config_.dcp_channels;
    fusion_ = ConvBn<T>(reg_, "fusion", bottleneck, bottleneck, 3, ConvGeometry{1, 1, 1}, true);

    const std::array<std::size_t, 4> in{bottleneck, dw[0], dw[1], dw[2]};
    const std::array<std::size_t, 4> skip{ew[3], ew[2], ew[1], ew[0]};
    for (std::size_t i = 0; i < 4; ++i) {
        decoders_.emplace_back(reg_, "decoder" + std::to_string(i + 1), in[i], skip[i], dw[i], config_.use_cbam,
                               config_.cbam_reduction);
    }
    head_ = Conv2d<T>(*reg_, "head", dw[3], 1, 1, ConvGeometry{}, true);
    init_params(*reg_, seed);
}

template <typename T>
ForwardResult<T> DilatedSegNet<T>::forward(const Var<T>& x, Mode mode) {
    check_model_input(x->value.shape());
    ForwardResult<T> r;
    Var<T> h = stem_.forward(x, mode);
    r.features[0] = h;
    h = maxpool2d(h, 3, 2, 1);
    for (const auto& b : stage2_) h = b.forward(h, mode);
    r.features[1] = h;
    for (const auto& b : stage3_) h = b.forward(h, mode);
    r.features[2] = h;
    for (const auto& b : stage4_) h = b.forward(h, mode);
    r.features[3] = h;

    for (std::size_t k = 0; k < 4; ++k) {
        r.pyramid[k] = config_.use_dcp ? dcp_[k].forward(r.features[k], mode) : plain_[k].forward(r.features[k], mode);
    }
    r.bottleneck = fusion_.forward(concat_channels<T>(r.pyramid), mode);
    last_bottleneck_ = r.bottleneck->value;

    Var<T> d = r.bottleneck;
    for (std::size_t i = 0; i < 4; ++i) d = decoders_[i].forward(d, r.features[3 - i], mode);
    r.mask = sigmoid(head_.forward(bilinear_upsample(d, 2)));
    return r;
}

template <typename T>
Tensor<T> DilatedSegNet<T>::predict(const Tensor<T>& x) {
    NoGradGuard guard;
    return forward(make_leaf(x), Mode::Eval).mask->value;
}

template <typename T>
TraceResult DilatedSegNet<T>::trace(const Shape& input) const {
    check_model_input(input);
    TraceResult r;
    MacTally& t = r.tally;
    Shape h = stem_.trace(input, t);
    r.features[0] = h;
    h = Shape{h.n, h.c, pool_out_extent(h.h, 3, 2, 1), pool_out_extent(h.w, 3, 2, 1)};
    t.add("maxpool2d", h.numel());
    for (const auto& b : stage2_) h = b.trace(h, t);
    r.features[1] = h;
    for (const auto& b : stage3_) h = b.trace(h, t);
    r.features[2] = h;
    for (const auto& b : stage4_) h = b.trace(h, t);
    r.features[3] = h;

    std::size_t channels = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        r.pyramid[k] = config_.use_dcp ? dcp_[k].trace(r.features[k], t) : plain_[k].trace(r.features[k], t);
        if (k > 0 && (r.pyramid[k].h != r.pyramid[0].h || r.pyramid[k].w != r.pyramid[0].w)) {
            throw DimensionError("pyramid level " + std::to_string(k + 1) + " " + r.pyramid[k].str() +
                                 " does not match level 1 " + r.pyramid[0].str());
        }
        channels += r.pyramid[k].c;
    }
    r.bottleneck = fusion_.trace(Shape{input.n, channels, r.pyramid[0].h, r.pyramid[0].w}, t);

    Shape d = r.bottleneck;
    for (std::size_t i = 0; i < 4; ++i) d = decoders_[i].trace(d, r.features[3 - i], t);
    const Shape up{d.n, d.c, 2 * d.h, 2 * d.w};
    t.add("bilinear_upsample", up.numel());
    r.mask = head_.trace(up, t);
    t.add("sigmoid", r.mask.numel());
    return r;
}

template <typename T>
void init_params(ParamRegistry<T>& reg, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : reg.params()) {
        auto data = p.var->value.data();
        switch (p.role) {
            case ParamRole::ConvWeight: {
                const double sd = std::sqrt(2.0 / static_cast<double>(p.fan_in));
                for (auto& v : data) v = static_cast<T>(sd * rng.normal());
                break;
            }
            case ParamRole::BnGamma:
            case ParamRole::BnRunningVar:
                std::fill(data.begin(), data.end(), T(1));
                break;
            default:
                std::fill(data.begin(), data.end(), T(0));
        }
    }
    reg.set_stats_ready(true);
}

template <typename T>
std::uint64_t count_params(const ParamRegistry<T>& reg) {
    return count_params_matching(reg, "");
}

template <typename T>
std::uint64_t count_params_matching(const ParamRegistry<T>& reg, const std::string& fragment) {
    std::uint64_t total = 0;
    for (const auto& p : reg.params())
        if (p.trainable && p.name.find(fragment) != std::string::npos) total += p.var->value.numel();
    return total;
}

std::uint64_t count_macs(const ModelConfig& config, const Shape& input) {
    // Float storage is enough; the trace never reads parameter values.
    DilatedSegNet<float> model(config);
    return model.trace(input).tally.total;
}

template class DilatedSegNet<float>;
template class DilatedSegNet<double>;
template void init_params(ParamRegistry<float>&, std::uint64_t);
template void init_params(ParamRegistry<double>&, std::uint64_t);
template std::uint64_t count_params(const ParamRegistry<float>&);
template std::uint64_t count_params(const ParamRegistry<double>&);
template std::uint64_t count_params_matching(const ParamRegistry<float>&, const std::string&);
template std::uint64_t count_params_matching(const ParamRegistry<double>&, const std::string&);

}  // namespace dseg
