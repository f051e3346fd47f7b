#include "dsegnet/gradsuite.hpp"

#include <cmath>
#include <memory>

#include "dsegnet/layers.hpp"
#include "dsegnet/model.hpp"
#include "dsegnet/ops.hpp"
#include "dsegnet/rng.hpp"
#include "dsegnet/training.hpp"

namespace dseg {

namespace {

Tensor<double> uniform(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor<double> t(s);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

Tensor<double> binary(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> t(s);
    for (auto& v : t.data()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
    return t;
}

// Keeps batch-norm layers away from gamma=1, beta=0, where a single-channel
// normalization is scale invariant and the upstream gradient collapses.
void jitter_affine(ParamRegistry<double>& reg, std::uint64_t seed) {
    Rng rng(seed ^ 0xA5A5);
    for (auto& p : reg.params()) {
        if (p.role == ParamRole::BnGamma)
            for (auto& v : p.var->value.data()) v = rng.uniform(0.5, 1.5);
        if (p.role == ParamRole::BnBeta)
            for (auto& v : p.var->value.data()) v = rng.uniform(-0.5, 0.5);
    }
}

using Instance = std::function<GradCheckReport(std::uint64_t seed, GradCheckOptions opt)>;

SuiteResult run_suite(const std::string& name, std::size_t seeds, double tol, const Instance& inst) {
    SuiteResult r;
    r.name = name;
    r.tol = tol;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        GradCheckOptions opt;
        opt.tol = tol;
        opt.seed = seed;
        opt.max_coords = 200;
        const auto rep = inst(seed, opt);
        ++r.instances;
        if (rep.pass) ++r.passed;
        const double err = rep.finite ? rep.max_rel_err : INFINITY;
        if (r.instances == 1 || err > r.worst_rel) {
            r.worst_rel = err;
            r.worst = "seed " + std::to_string(seed) + ": " + rep.worst;
        }
    }
    return r;
}

GradCheckReport layer_check(ParamRegistry<double>& reg, std::vector<Var<double>> inputs,
                            const std::function<Var<double>()>& out, const Tensor<double>& wts,
                            const GradCheckOptions& opt) {
    std::vector<Var<double>> leaves = reg.trainable();
    for (auto& v : inputs) leaves.push_back(v);
    return grad_check_leaves([&] { return weighted_sum(out(), wts); }, leaves, opt);
}

}  // namespace

std::vector<SuiteResult> run_grad_suites(const SuiteOptions& o, const std::function<void(const SuiteResult&)>& on_suite) {
    std::vector<SuiteResult> out;
    auto run = [&](const std::string& name, double tol, const Instance& inst, std::size_t seeds) {
        out.push_back(run_suite(name, seeds, tol, inst));
        if (on_suite) on_suite(out.back());
    };
    const std::size_t n = o.seeds;
    const double tol = o.tol;

    run("conv2d", tol, [](std::uint64_t s, GradCheckOptions opt) {
        const std::size_t dil[] = {1, 2, 3, 6, 9};
        const std::size_t d = dil[s % 5], stride = 1 + s % 2;
        auto x = make_leaf(uniform(Shape{2, 3, 2 * d + 5, 2 * d + 4}, 100 + s), true);
        auto w = make_leaf(uniform(Shape{4, 3, 3, 3}, 200 + s), true);
        auto b = make_leaf(uniform(Shape{1, 4, 1, 1}, 300 + s), true);
        const ConvGeometry g{stride, d, d};
        const auto probe = conv2d(x, w, b, g)->value;
        const auto wts = uniform(probe.shape(), 400 + s);
        const Var<double> leaves[] = {x, w, b};
        return grad_check_leaves([&] { return weighted_sum(conv2d(x, w, b, g), wts); }, leaves, opt);
    }, n);

    run("batchnorm2d", tol, [](std::uint64_t s, GradCheckOptions opt) {
        auto x = make_leaf(uniform(Shape{2, 3, 4, 5}, 100 + s, -2, 2), true);
        auto gamma = make_leaf(uniform(Shape{1, 3, 1, 1}, 200 + s, 0.5, 1.5), true);
        auto beta = make_leaf(uniform(Shape{1, 3, 1, 1}, 300 + s), true);
        const auto wts = uniform(x->value.shape(), 400 + s);
        const Var<double> leaves[] = {x, gamma, beta};
        return grad_check_leaves([&] {
            RunningStats<double> running;
            return weighted_sum(batchnorm2d(x, gamma, beta, running, Mode::Train), wts);
        }, leaves, opt);
    }, n);

    run("maxpool2d", tol, [](std::uint64_t s, GradCheckOptions opt) {
        const std::size_t k = 2 + s % 2, stride = 2, pad = s % 2;
        auto x = make_leaf(uniform(Shape{2, 2, 8, 7}, 100 + s), true);
        const auto wts = uniform(maxpool2d(x, k, stride, pad)->value.shape(), 200 + s);
        return grad_check([&](const Var<double>& v) { return weighted_sum(maxpool2d(v, k, stride, pad), wts); },
                          x->value, opt);
    }, n);

    run("relu", tol, [](std::uint64_t s, GradCheckOptions opt) {
        const auto x = uniform(Shape{2, 3, 5, 5}, 100 + s);
        const auto wts = uniform(x.shape(), 200 + s);
        return grad_check([&](const Var<double>& v) { return weighted_sum(relu(v), wts); }, x, opt);
    }, n);

    run("sigmoid", tol, [](std::uint64_t s, GradCheckOptions opt) {
        const auto x = uniform(Shape{2, 3, 5, 5}, 100 + s, -4, 4);
        const auto wts = uniform(x.shape(), 200 + s);
        return grad_check([&](const Var<double>& v) { return weighted_sum(sigmoid(v), wts); }, x, opt);
    }, n);

    run("bilinear_upsample", tol, [](std::uint64_t s, GradCheckOptions opt) {
        const auto x = uniform(Shape{2, 2, 3 + s % 3, 4}, 100 + s);
        const auto wts = uniform(Shape{2, 2, 2 * (3 + s % 3), 8}, 200 + s);
        return grad_check([&](const Var<double>& v) { return weighted_sum(bilinear_upsample(v, 2), wts); }, x, opt);
    }, n);

    run("global_pool", tol, [](std::uint64_t s, GradCheckOptions opt) {
        const auto x = uniform(Shape{2, 3, 4, 5}, 100 + s);
        const auto wts = uniform(Shape{2, 3, 1, 1}, 200 + s);
        const auto wts2 = uniform(Shape{2, 3, 1, 1}, 300 + s);
        return grad_check([&](const Var<double>& v) {
            return add(weighted_sum(global_pool(v, PoolMode::Avg), wts), weighted_sum(global_pool(v, PoolMode::Max), wts2));
        }, x, opt);
    }, n);

    run("channel_reduce", tol, [](std::uint64_t s, GradCheckOptions opt) {
        const auto x = uniform(Shape{2, 4, 3, 5}, 100 + s);
        const auto wts = uniform(Shape{2, 1, 3, 5}, 200 + s);
        const auto wts2 = uniform(Shape{2, 1, 3, 5}, 300 + s);
        return grad_check([&](const Var<double>& v) {
            return add(weighted_sum(channel_reduce(v, PoolMode::Avg), wts),
                       weighted_sum(channel_reduce(v, PoolMode::Max), wts2));
        }, x, opt);
    }, n);

    run("add_mul_concat", tol, [](std::uint64_t s, GradCheckOptions opt) {
        auto a = make_leaf(uniform(Shape{2, 3, 4, 4}, 100 + s), true);
        auto b = make_leaf(uniform(Shape{2, 3, 1, 1}, 200 + s), true);
        auto c = make_leaf(uniform(Shape{2, 1, 4, 4}, 300 + s), true);
        const auto wts = uniform(Shape{2, 6, 4, 4}, 400 + s);
        const Var<double> leaves[] = {a, b, c};
        return grad_check_leaves([&] {
            const Var<double> parts[] = {add(a, b), mul(a, c)};
            return weighted_sum(concat_channels<double>(parts), wts);
        }, leaves, opt);
    }, n);

    run("conv_bn_relu", tol, [](std::uint64_t s, GradCheckOptions opt) {
        auto reg = std::make_shared<ParamRegistry<double>>();
        ConvBn<double> layer(reg, "cb", 3, 4, 3, ConvGeometry{1, 1 + s % 3, 1 + s % 3}, true);
        init_params(*reg, s);
        jitter_affine(*reg, s);
        auto x = make_leaf(uniform(Shape{2, 3, 6, 6}, 100 + s), true);
        return layer_check(*reg, {x}, [&] { return layer.forward(x, Mode::Train); }, uniform(Shape{2, 4, 6, 6}, s), opt);
    }, n);

    for (auto style : {BlockStyle::Basic, BlockStyle::Bottleneck}) {
        run(style == BlockStyle::Basic ? "residual_basic" : "residual_bottleneck", tol,
            [style](std::uint64_t s, GradCheckOptions opt) {
                auto reg = std::make_shared<ParamRegistry<double>>();
                const bool project = s % 2 == 1;
                const std::size_t out_c = project ? 8 : 4, ext = project ? 3 : 5;
                ResidualBlock<double> block(reg, "r", 4, out_c, project ? 2 : 1, style);
                init_params(*reg, s);
                jitter_affine(*reg, s);
                auto x = make_leaf(uniform(Shape{2, 4, 5, 5}, 100 + s), true);
                return layer_check(*reg, {x}, [&] { return block.forward(x, Mode::Train); },
                                   uniform(Shape{2, out_c, ext, ext}, s), opt);
            }, n);
    }

    run("cbam", tol, [](std::uint64_t s, GradCheckOptions opt) {
        ParamRegistry<double> reg;
        Cbam<double> cbam(reg, "a", 6, 3);
        init_params(reg, s);
        auto x = make_leaf(uniform(Shape{2, 6, 4, 5}, 50 + s), true);
        return layer_check(reg, {x}, [&] { return cbam.forward(x); }, uniform(Shape{2, 6, 4, 5}, s), opt);
    }, n);

    run("dcp", tol, [](std::uint64_t s, GradCheckOptions opt) {
        auto reg = std::make_shared<ParamRegistry<double>>();
        DcpBlock<double> block(reg, "d", 2, 2, 2);
        init_params(*reg, s);
        jitter_affine(*reg, s);
        auto x = make_leaf(uniform(Shape{2, 2, 6, 6}, 70 + s), true);
        return layer_check(*reg, {x}, [&] { return block.forward(x, Mode::Train); }, uniform(Shape{2, 2, 3, 3}, s),
                           opt);
    }, n);

    run("decoder", tol, [](std::uint64_t s, GradCheckOptions opt) {
        auto reg = std::make_shared<ParamRegistry<double>>();
        DecoderBlock<double> dec(reg, "dec", 4, 2, 4, true, 2);
        init_params(*reg, s);
        jitter_affine(*reg, s);
        auto x = make_leaf(uniform(Shape{2, 4, 2, 3}, 30 + s), true);
        auto skip = make_leaf(uniform(Shape{2, 2, 4, 6}, 40 + s), true);
        return layer_check(*reg, {x, skip}, [&] { return dec.forward(x, skip, Mode::Train); },
                           uniform(Shape{2, 4, 4, 6}, s), opt);
    }, n);

    run("dice_loss", tol, [](std::uint64_t s, GradCheckOptions opt) {
        const auto p = uniform(Shape{2, 1, 4, 5}, s, 0.02, 0.98);
        const auto g = binary(p.shape(), s + 50);
        return grad_check([&](const Var<double>& x) { return dice_loss(x, g); }, p, opt);
    }, n);

    run("bce_loss", tol, [](std::uint64_t s, GradCheckOptions opt) {
        const auto p = uniform(Shape{2, 1, 4, 5}, s, 0.02, 0.98);
        const auto g = binary(p.shape(), s + 50);
        return grad_check([&](const Var<double>& x) { return bce_loss(x, g); }, p, opt);
    }, n);

    if (o.full_network) {
        const std::size_t coords = o.network_coords;
        run("network_desk", o.network_tol, [coords](std::uint64_t s, GradCheckOptions opt) {
            DilatedSegNet<double> net(ModelConfig::desk(), 17 + s);
            jitter_affine(net.registry(), 17 + s);
            auto x = make_leaf(uniform(Shape{2, 3, 64, 64}, 8 + s), true);
            const auto wts = uniform(Shape{2, 1, 64, 64}, 9 + s);
            std::vector<Var<double>> leaves = net.registry().trainable();
            leaves.push_back(x);
            opt.max_coords = coords;
            return grad_check_leaves([&] { return weighted_sum(net.forward(x, Mode::Train).mask, wts); }, leaves, opt);
        }, 1);
    }
    return out;
}

}  // namespace dseg
