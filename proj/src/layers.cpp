#include "dsegnet/layers.hpp"

#include <algorithm>

#include "dsegnet/error.hpp"

namespace dseg {
namespace {

std::uint64_t conv_macs(const Shape& out, const Shape& weight) {
    return static_cast<std::uint64_t>(out.n) * out.h * out.w * weight.n * weight.c * weight.h * weight.w;
}

}  // namespace

template <typename T>
Var<T> ParamRegistry<T>::add(const std::string& name, Shape storage, std::vector<std::uint32_t> dims, ParamRole role,
                             std::size_t fan_in) {
    if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    const bool trainable = role != ParamRole::BnRunningMean && role != ParamRole::BnRunningVar;
    auto var = make_leaf(Tensor<T>(storage), trainable);
    params_.push_back(Parameter<T>{name, var, role, trainable, std::move(dims), fan_in});
    return var;
}

template <typename T>
const Parameter<T>* ParamRegistry<T>::find(const std::string& name) const {
    auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
    return it == params_.end() ? nullptr : &*it;
}

template <typename T>
std::vector<Var<T>> ParamRegistry<T>::trainable() const {
    std::vector<Var<T>> out;
    for (const auto& p : params_)
        if (p.trainable) out.push_back(p.var);
    return out;
}

template <typename T>
void ParamRegistry<T>::zero_grad() {
    for (auto& p : params_) p.var->zero_grad();
}

template <typename T>
Conv2d<T>::Conv2d(ParamRegistry<T>& reg, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                  std::size_t kernel, ConvGeometry geometry, bool bias)
    : geometry_(geometry), out_ch_(out_ch) {
    const auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
    weight_ = reg.add(join_name(name, "weight"), Shape{out_ch, in_ch, kernel, kernel},
                      {u(out_ch), u(in_ch), u(kernel), u(kernel)}, ParamRole::ConvWeight, in_ch * kernel * kernel);
    if (bias) bias_ = reg.add(join_name(name, "bias"), Shape{1, out_ch, 1, 1}, {u(out_ch)}, ParamRole::ConvBias);
}

template <typename T>
Var<T> Conv2d<T>::forward(const Var<T>& x) const {
    return conv2d(x, weight_, bias_, geometry_);
}

template <typename T>
Shape Conv2d<T>::trace(const Shape& in, MacTally& tally) const {
    const Shape out = conv2d_output_shape(in, weight_->value.shape(), geometry_);
    tally.add("conv2d", conv_macs(out, weight_->value.shape()));
    return out;
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(RegistryPtr<T> reg, const std::string& name, std::size_t channels) : reg_(std::move(reg)) {
    const Shape s{1, channels, 1, 1};
    const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(channels)};
    gamma_ = reg_->add(join_name(name, "gamma"), s, dims, ParamRole::BnGamma);
    beta_ = reg_->add(join_name(name, "beta"), s, dims, ParamRole::BnBeta);
    running_mean_ = reg_->add(join_name(name, "running_mean"), s, dims, ParamRole::BnRunningMean);
    running_var_ = reg_->add(join_name(name, "running_var"), s, dims, ParamRole::BnRunningVar);
}

template <typename T>
Var<T> BatchNorm2d<T>::forward(const Var<T>& x, Mode mode) const {
    auto& mean = running_mean_->value;
    auto& var = running_var_->value;
    RunningStats<T> stats{std::vector<T>(mean.data().begin(), mean.data().end()),
                          std::vector<T>(var.data().begin(), var.data().end()), reg_->stats_ready()};
    Var<T> out = batchnorm2d(x, gamma_, beta_, stats, mode);
    if (mode == Mode::Train) {
        std::copy(stats.mean.begin(), stats.mean.end(), mean.data().begin());
        std::copy(stats.var.begin(), stats.var.end(), var.data().begin());
        reg_->set_stats_ready(true);
    }
    return out;
}

template <typename T>
Shape BatchNorm2d<T>::trace(const Shape& in, MacTally& tally) const {
    if (in.c != gamma_->value.shape().c) {
        throw DimensionError("batchnorm2d: " + in.str() + " vs " + std::to_string(gamma_->value.shape().c) +
                             " channels");
    }
    tally.add("batchnorm2d", in.numel());
    return in;
}

template <typename T>
ConvBn<T>::ConvBn(RegistryPtr<T> reg, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                  std::size_t kernel, ConvGeometry geometry, bool relu)
    : conv_(*reg, join_name(name, "conv"), in_ch, out_ch, kernel, geometry, false),
      bn_(reg, join_name(name, "bn"), out_ch),
      relu_(relu) {}

template <typename T>
Var<T> ConvBn<T>::forward(const Var<T>& x, Mode mode) const {
    Var<T> y = bn_.forward(conv_.forward(x), mode);
    return relu_ ? relu(y) : y;
}

template <typename T>
Shape ConvBn<T>::trace(const Shape& in, MacTally& tally) const {
    const Shape out = bn_.trace(conv_.trace(in, tally), tally);
    if (relu_) tally.add("relu", out.numel());
    return out;
}

template <typename T>
ResidualBlock<T>::ResidualBlock(RegistryPtr<T> reg, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                                std::size_t stride, BlockStyle style)
    : out_ch_(out_ch) {
    if (style == BlockStyle::Basic) {
        main_.emplace_back(reg, join_name(name, "conv1"), in_ch, out_ch, 3, ConvGeometry{stride, 1, 1}, true);
        main_.emplace_back(reg, join_name(name, "conv2"), out_ch, out_ch, 3, ConvGeometry{1, 1, 1}, false);
    } else {
        if (out_ch % 4 != 0) throw ConfigError("bottleneck block '" + name + "' needs a width divisible by 4");
        const std::size_t mid = out_ch / 4;
        main_.emplace_back(reg, join_name(name, "conv1"), in_ch, mid, 1, ConvGeometry{}, true);
        main_.emplace_back(reg, join_name(name, "conv2"), mid, mid, 3, ConvGeometry{stride, 1, 1}, true);
        main_.emplace_back(reg, join_name(name, "conv3"), mid, out_ch, 1, ConvGeometry{}, false);
    }
    if (in_ch != out_ch || stride != 1) {
        shortcut_.emplace(reg, join_name(name, "shortcut"), in_ch, out_ch, 1, ConvGeometry{stride, 0, 1}, false);
    }
}

template <typename T>
Var<T> ResidualBlock<T>::forward(const Var<T>& x, Mode mode) const {
    Var<T> h = x;
    for (const auto& layer : main_) h = layer.forward(h, mode);
    Var<T> skip = shortcut_ ? shortcut_->forward(x, mode) : x;
    return relu(add(h, skip));
}

template <typename T>
Shape ResidualBlock<T>::trace(const Shape& in, MacTally& tally) const {
    Shape h = in;
    for (const auto& layer : main_) h = layer.trace(h, tally);
    const Shape skip = shortcut_ ? shortcut_->trace(in, tally) : in;
    if (!(skip == h)) throw DimensionError("residual block: main " + h.str() + " vs shortcut " + skip.str());
    tally.add("add", h.numel());
    tally.add("relu", h.numel());
    return h;
}

template <typename T>
Cbam<T>::Cbam(ParamRegistry<T>& reg, const std::string& name, std::size_t channels, std::size_t reduction) {
    if (reduction == 0 || channels < reduction) {
        throw ConfigError("cbam '" + name + "': reduction ratio exceeds channels (" + std::to_string(reduction) +
                          " > " + std::to_string(channels) + ")");
    }
    const std::size_t hidden = channels / reduction;
    mlp_reduce_ = Conv2d<T>(reg, join_name(name, "mlp_reduce"), channels, hidden, 1, ConvGeometry{}, false);
    mlp_expand_ = Conv2d<T>(reg, join_name(name, "mlp_expand"), hidden, channels, 1, ConvGeometry{}, false);
    spatial_ = Conv2d<T>(reg, join_name(name, "spatial"), 2, 1, 7, ConvGeometry{1, 3, 1}, false);
}

template <typename T>
typename Cbam<T>::Result Cbam<T>::forward_detailed(const Var<T>& x) const {
    auto mlp = [&](const Var<T>& d) { return mlp_expand_.forward(relu(mlp_reduce_.forward(d))); };
    Var<T> channel = sigmoid(add(mlp(global_pool(x, PoolMode::Avg)), mlp(global_pool(x, PoolMode::Max))));
    Var<T> refined = mul(x, channel);
    const Var<T> maps[] = {channel_reduce(refined, PoolMode::Avg), channel_reduce(refined, PoolMode::Max)};
    Var<T> spatial = sigmoid(spatial_.forward(concat_channels<T>(maps)));
    return Result{mul(refined, spatial), channel, spatial};
}

template <typename T>
Shape Cbam<T>::trace(const Shape& in, MacTally& tally) const {
    const Shape desc{in.n, in.c, 1, 1};
    for (int k = 0; k < 2; ++k) {
        tally.add("global_pool", desc.numel());
        const Shape hidden = mlp_reduce_.trace(desc, tally);
        tally.add("relu", hidden.numel());
        mlp_expand_.trace(hidden, tally);
    }
    tally.add("add", desc.numel());
    tally.add("sigmoid", desc.numel());
    tally.add("mul", in.numel());
    const Shape map{in.n, 1, in.h, in.w};
    tally.add("channel_reduce", 2 * map.numel());
    const Shape att = spatial_.trace(Shape{in.n, 2, in.h, in.w}, tally);
    tally.add("sigmoid", att.numel());
    tally.add("mul", in.numel());
    return in;
}

template <typename T>
DcpBlock<T>::DcpBlock(RegistryPtr<T> reg, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                      std::size_t pool)
    : pool_(pool) {
    for (std::size_t d : kDilations) {
        branches_.emplace_back(reg, join_name(name, "branch_d" + std::to_string(d)), in_ch, out_ch, 3,
                               ConvGeometry{1, d, d}, true);
    }
    fuse_ = ConvBn<T>(reg, join_name(name, "fuse"), 4 * out_ch, out_ch, 1, ConvGeometry{}, true);
}

template <typename T>
void DcpBlock<T>::check_extent(const Shape& in) const {
    if (in.h < pool_ || in.w < pool_) {
        throw DimensionError("dcp: feature map too small (" + in.str() + ") for pooling by " + std::to_string(pool_));
    }
}

template <typename T>
Var<T> DcpBlock<T>::forward(const Var<T>& x, Mode mode) const {
    check_extent(x->value.shape());
    std::vector<Var<T>> outs;
    for (const auto& b : branches_) outs.push_back(b.forward(x, mode));
    Var<T> fused = fuse_.forward(concat_channels<T>(outs), mode);
    return pool_ > 1 ? maxpool2d(fused, pool_, pool_) : fused;
}

template <typename T>
Shape DcpBlock<T>::trace(const Shape& in, MacTally& tally) const {
    check_extent(in);
    Shape branch;
    for (const auto& b : branches_) branch = b.trace(in, tally);
    const Shape fused = fuse_.trace(Shape{in.n, 4 * branch.c, branch.h, branch.w}, tally);
    if (pool_ == 1) return fused;
    const Shape pooled{fused.n, fused.c, pool_out_extent(fused.h, pool_, pool_, 0),
                       pool_out_extent(fused.w, pool_, pool_, 0)};
    tally.add("maxpool2d", pooled.numel());
    return pooled;
}

template <typename T>
PlainPoolBlock<T>::PlainPoolBlock(RegistryPtr<T> reg, const std::string& name, std::size_t in_ch, std::size_t out_ch,
                                  std::size_t pool)
    : conv_(reg, join_name(name, "plain"), in_ch, out_ch, 3, ConvGeometry{1, 1, 1}, true), pool_(pool) {}

template <typename T>
Var<T> PlainPoolBlock<T>::forward(const Var<T>& x, Mode mode) const {
    Var<T> y = conv_.forward(x, mode);
    return pool_ > 1 ? maxpool2d(y, pool_, pool_) : y;
}

template <typename T>
Shape PlainPoolBlock<T>::trace(const Shape& in, MacTally& tally) const {
    const Shape y = conv_.trace(in, tally);
    if (pool_ == 1) return y;
    const Shape pooled{y.n, y.c, pool_out_extent(y.h, pool_, pool_, 0), pool_out_extent(y.w, pool_, pool_, 0)};
    tally.add("maxpool2d", pooled.numel());
    return pooled;
}

template <typename T>
DecoderBlock<T>::DecoderBlock(RegistryPtr<T> reg, const std::string& name, std::size_t in_ch, std::size_t skip_ch,
                              std::size_t out_ch, bool use_cbam, std::size_t reduction)
    : res1_(reg, join_name(name, "res1"), in_ch + skip_ch, out_ch, 1, BlockStyle::Basic),
      res2_(reg, join_name(name, "res2"), out_ch, out_ch, 1, BlockStyle::Basic),
      out_ch_(out_ch) {
    if (use_cbam) cbam_.emplace(*reg, join_name(name, "cbam"), out_ch, reduction);
}

template <typename T>
Var<T> DecoderBlock<T>::forward(const Var<T>& x, const Var<T>& skip, Mode mode) const {
    const Shape& xs = x->value.shape();
    const Shape& ss = skip->value.shape();
    if (ss.h != 2 * xs.h || ss.w != 2 * xs.w || ss.n != xs.n) {
        throw DimensionError("decoder: skip " + ss.str() + " is not twice the extent of input " + xs.str());
    }
    const Var<T> parts[] = {bilinear_upsample(x, 2), skip};
    Var<T> h = res2_.forward(res1_.forward(concat_channels<T>(parts), mode), mode);
    return cbam_ ? cbam_->forward(h) : h;
}

template <typename T>
Shape DecoderBlock<T>::trace(const Shape& in, const Shape& skip, MacTally& tally) const {
    if (skip.h != 2 * in.h || skip.w != 2 * in.w || skip.n != in.n) {
        throw DimensionError("decoder: skip " + skip.str() + " is not twice the extent of input " + in.str());
    }
    const Shape up{in.n, in.c, 2 * in.h, 2 * in.w};
    tally.add("bilinear_upsample", up.numel());
    Shape h = res2_.trace(res1_.trace(Shape{in.n, in.c + skip.c, up.h, up.w}, tally), tally);
    return cbam_ ? cbam_->trace(h, tally) : h;
}

#define DSEG_INSTANTIATE(T)             \
    template class ParamRegistry<T>;    \
    template class Conv2d<T>;           \
    template class BatchNorm2d<T>;      \
    template class ConvBn<T>;           \
    template class ResidualBlock<T>;    \
    template class Cbam<T>;             \
    template class DcpBlock<T>;         \
    template class PlainPoolBlock<T>;   \
    template class DecoderBlock<T>;

DSEG_INSTANTIATE(float)
DSEG_INSTANTIATE(double)
#undef DSEG_INSTANTIATE

}  // namespace dseg
