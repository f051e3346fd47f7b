#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dsegnet/error.hpp"
#include "dsegnet/gradcheck.hpp"
#include "dsegnet/kernels.hpp"
#include "dsegnet/ops.hpp"
#include "test_util.hpp"

namespace dseg {
namespace {

using testing::naive_conv;
using testing::random_tensor;

Tensor<double> t2x2(double a, double b, double c, double d) { return Tensor<double>(Shape{1, 1, 2, 2}, {a, b, c, d}); }

TEST(Tensor, OffsetIsRowMajorNCHW) {
    Tensor<float> t(Shape{2, 3, 4, 5});
    EXPECT_EQ(t.numel(), 120u);
    EXPECT_EQ(t.offset(1, 2, 3, 4), ((1 * 3 + 2) * 4 + 3) * 5 + 4u);
    EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), DimensionError);
}

TEST(Tensor, TextDumpRoundTrip) {
    auto t = random_tensor<float>(Shape{1, 2, 3, 4}, 3);
    std::stringstream ss;
    write_text(ss, t);
    EXPECT_EQ(ss.str().substr(0, 14), "shape 1 2 3 4\n");
    auto back = read_text<float>(ss);
    EXPECT_TRUE(back.bitwise_equal(t));
}

TEST(Conv2d, OutputExtentFormula) {
    ConvGeometry g{1, 9, 9};
    EXPECT_EQ(conv_out_extent(64, 3, g), 64u);
    EXPECT_EQ(conv_out_extent(5, 3, ConvGeometry{1, 0, 2}), 1u);
    EXPECT_EQ(conv_out_extent(64, 7, ConvGeometry{2, 3, 1}), 32u);
}

TEST(Conv2d, ShapeLawSweep) {
    for (std::size_t k : {1, 3, 7})
        for (std::size_t s : {1, 2})
            for (std::size_t d : {1, 2, 3, 6, 9})
                for (std::size_t p : {std::size_t{0}, std::size_t{1}, d}) {
                    const std::size_t in = 40;
                    const long long expect =
                        (static_cast<long long>(in + 2 * p) - static_cast<long long>(d * (k - 1)) - 1) /
                            static_cast<long long>(s) + 1;
                    auto x = random_tensor<float>(Shape{1, 2, in, in}, k * 100 + s * 10 + d);
                    auto w = random_tensor<float>(Shape{3, 2, k, k}, 7);
                    if (static_cast<long long>(in + 2 * p) < static_cast<long long>(d * (k - 1) + 1)) {
                        EXPECT_THROW(kernels::conv2d<float>(x, w, {}, ConvGeometry{s, p, d}), DimensionError);
                        continue;
                    }
                    auto out = kernels::conv2d<float>(x, w, {}, ConvGeometry{s, p, d});
                    EXPECT_EQ(static_cast<long long>(out.shape().h), expect) << k << s << p << d;
                    EXPECT_EQ(static_cast<long long>(out.shape().w), expect);
                }
}

TEST(Conv2d, OnesKernelCentreAndCorner) {
    Tensor<double> x(Shape{1, 1, 3, 3}, 1.0), w(Shape{1, 1, 3, 3}, 1.0);
    auto out = kernels::conv2d<double>(x, w, {}, ConvGeometry{1, 1, 1});
    EXPECT_DOUBLE_EQ(out.at(0, 0, 1, 1), 9.0);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 0), 4.0);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 2, 2), 4.0);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 1), 6.0);
}

TEST(Conv2d, DilatedOnesMatchesInflatedKernel) {
    Tensor<double> x(Shape{1, 1, 5, 5}, 1.0), w(Shape{1, 1, 3, 3}, 1.0);
    auto out = kernels::conv2d<double>(x, w, {}, ConvGeometry{1, 0, 2});
    ASSERT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(out[0], 9.0);
    auto inflated = kernels::inflate_kernel(w, 2);
    EXPECT_EQ(inflated.shape(), (Shape{1, 1, 5, 5}));
    EXPECT_DOUBLE_EQ(kernels::conv2d<double>(x, inflated, {}, ConvGeometry{})[0], 9.0);
}

TEST(Conv2d, MatchesNaiveOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::size_t s = 1 + seed % 2, d = 1 + seed % 3, p = seed % 4;
        auto x = random_tensor(Shape{2, 3, 11, 9}, seed);
        auto w = random_tensor(Shape{4, 3, 3, 3}, seed + 100);
        auto got = kernels::conv2d<double>(x, w, {}, ConvGeometry{s, p, d});
        auto want = naive_conv(x, w, s, p, d);
        EXPECT_LT(max_abs_diff(got, want), 1e-12);
    }
}

TEST(Conv2d, DirectAndIm2colAgreeBitwise) {
    std::uint64_t seed = 0;
    for (std::size_t k : {1, 3, 7})
        for (std::size_t s : {1, 2})
            for (std::size_t d : {1, 2, 3, 6, 9})
                for (std::size_t p : {std::size_t{0}, std::size_t{1}, d}) {
                    const std::size_t in = 24;
                    if (in + 2 * p < d * (k - 1) + 1) continue;
                    auto x = random_tensor<float>(Shape{2, 3, in, in + 3}, ++seed);
                    auto w = random_tensor<float>(Shape{5, 3, k, k}, ++seed);
                    auto b = random_tensor<float>(Shape{1, 5, 1, 1}, ++seed);
                    ConvGeometry g{s, p, d};
                    auto fast = kernels::conv2d<float>(x, w, b.data(), g);
                    auto ref = kernels::conv2d_direct<float>(x, w, b.data(), g);
                    EXPECT_TRUE(fast.bitwise_equal(ref)) << "k=" << k << " s=" << s << " p=" << p << " d=" << d;
                }
}

TEST(Conv2d, DilationEquivalenceProperty) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t dils[] = {2, 3, 6, 9};
        const std::size_t d = dils[seed % 4];
        auto x = random_tensor<float>(Shape{1, 2, 24, 24}, seed);
        auto w = random_tensor<float>(Shape{3, 2, 3, 3}, seed + 1000);
        auto a = kernels::conv2d<float>(x, w, {}, ConvGeometry{1, d, d});
        auto b = kernels::conv2d<float>(x, kernels::inflate_kernel(w, d), {}, ConvGeometry{1, d, 1});
        EXPECT_LE(max_abs_diff(a, b), 1e-5);
    }
}

TEST(Conv2d, LinearWithoutBias) {
    auto x = random_tensor<double>(Shape{1, 3, 10, 10}, 5);
    auto w = random_tensor<double>(Shape{2, 3, 3, 3}, 6);
    const double alpha = 2.75;
    Tensor<double> ax = x;
    for (auto& v : ax.data()) v *= alpha;
    auto y = kernels::conv2d<double>(x, w, {}, ConvGeometry{1, 1, 2});
    auto ay = kernels::conv2d<double>(ax, w, {}, ConvGeometry{1, 1, 2});
    for (std::size_t k = 0; k < y.numel(); ++k) {
        EXPECT_NEAR(ay[k], alpha * y[k], 1e-6 * std::max(1.0, std::abs(alpha * y[k])));
    }
}

TEST(Conv2d, RejectsChannelMismatchAndEmptyOutput) {
    Tensor<float> x(Shape{1, 3, 8, 8}), w(Shape{4, 2, 3, 3});
    EXPECT_THROW(kernels::conv2d<float>(x, w, {}, ConvGeometry{}), DimensionError);
    Tensor<float> w2(Shape{4, 3, 3, 3});
    EXPECT_THROW(kernels::conv2d<float>(x, w2, {}, ConvGeometry{1, 0, 9}), DimensionError);
    try {
        kernels::conv2d<float>(x, w, {}, ConvGeometry{});
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("(1,3,8,8)"), std::string::npos);
    }
}

TEST(MaxPool, BasicAndTieBreaking) {
    auto r = kernels::maxpool2d(t2x2(1, 2, 3, 4), 2, 2);
    EXPECT_EQ(r.out.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(r.out[0], 4.0);

    Tensor<double> c(Shape{1, 2, 6, 6}, 3.5);
    auto rc = kernels::maxpool2d(c, 3, 2);
    for (double v : rc.out.data()) EXPECT_DOUBLE_EQ(v, 3.5);

    EXPECT_EQ(kernels::maxpool2d(Tensor<float>(Shape{1, 1, 8, 8}), 2, 2).out.shape(), (Shape{1, 1, 4, 4}));

    // Ties route the gradient to the first element in scan order.
    auto x = make_leaf(Tensor<double>(Shape{1, 1, 2, 2}, 1.0), true);
    backward(sum(maxpool2d(x, 2, 2)));
    EXPECT_DOUBLE_EQ(x->grad[0], 1.0);
    EXPECT_DOUBLE_EQ(x->grad[1] + x->grad[2] + x->grad[3], 0.0);

    EXPECT_THROW(kernels::maxpool2d(Tensor<float>(Shape{1, 1, 2, 2}), 3, 1), DimensionError);
}

TEST(GlobalPool, AvgAndMax) {
    EXPECT_DOUBLE_EQ(kernels::global_pool(t2x2(1, 2, 3, 4), PoolMode::Avg).out[0], 2.5);
    EXPECT_DOUBLE_EQ(kernels::global_pool(t2x2(1, 2, 3, 4), PoolMode::Max).out[0], 4.0);
    auto c = kernels::global_pool(Tensor<double>(Shape{2, 3, 5, 5}, -1.25), PoolMode::Avg).out;
    EXPECT_EQ(c.shape(), (Shape{2, 3, 1, 1}));
    for (double v : c.data()) EXPECT_DOUBLE_EQ(v, -1.25);
}

TEST(ChannelReduce, AvgMaxIdentity) {
    Tensor<double> x(Shape{1, 2, 3, 3});
    for (std::size_t k = 0; k < 9; ++k) {
        x[k] = 1.0;
        x[9 + k] = 3.0;
    }
    const auto avg = kernels::channel_reduce(x, PoolMode::Avg).out;
    const auto mx = kernels::channel_reduce(x, PoolMode::Max).out;
    for (double v : avg.data()) EXPECT_DOUBLE_EQ(v, 2.0);
    for (double v : mx.data()) EXPECT_DOUBLE_EQ(v, 3.0);
    auto one = random_tensor(Shape{2, 1, 4, 4}, 9);
    EXPECT_TRUE(kernels::channel_reduce(one, PoolMode::Avg).out.bitwise_equal(one));
    EXPECT_TRUE(kernels::channel_reduce(one, PoolMode::Max).out.bitwise_equal(one));
}

TEST(Bilinear, HalfPixelOracle) {
    // Oracle: evaluate src = (dst + 0.5)/scale - 0.5 clamped, then blend.
    auto oracle = [](const Tensor<double>& x, std::size_t scale, std::size_t y, std::size_t xo) {
        auto src = [&](std::size_t d, std::size_t n) {
            return std::clamp((d + 0.5) / static_cast<double>(scale) - 0.5, 0.0, static_cast<double>(n - 1));
        };
        const double sy = src(y, x.shape().h), sx = src(xo, x.shape().w);
        const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
        const std::size_t y1 = std::min(y0 + 1, x.shape().h - 1), x1 = std::min(x0 + 1, x.shape().w - 1);
        const double fy = sy - y0, fx = sx - x0;
        return (1 - fy) * ((1 - fx) * x.at(0, 0, y0, x0) + fx * x.at(0, 0, y0, x1)) +
               fy * ((1 - fx) * x.at(0, 0, y1, x0) + fx * x.at(0, 0, y1, x1));
    };
    auto x = t2x2(1, 2, 3, 4);
    auto up = kernels::bilinear_resize(x, 4, 4);
    // src_y(0) clamps to 0, src_x(1) = 0.25: 0.75*1 + 0.25*2.
    EXPECT_DOUBLE_EQ(up.at(0, 0, 0, 1), 1.25);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t xo = 0; xo < 4; ++xo) EXPECT_NEAR(up.at(0, 0, y, xo), oracle(x, 2, y, xo), 1e-15);

    auto r = random_tensor(Shape{1, 1, 5, 7}, 4);
    auto up3 = kernels::bilinear_resize(r, 15, 21);
    for (std::size_t y = 0; y < 15; ++y)
        for (std::size_t xo = 0; xo < 21; ++xo) EXPECT_NEAR(up3.at(0, 0, y, xo), oracle(r, 3, y, xo), 1e-12);
}

TEST(Bilinear, ConstantFieldAndShape) {
    auto v = make_leaf(Tensor<float>(Shape{1, 2, 16, 16}, 0.3f));
    auto up = bilinear_upsample(v, 2);
    EXPECT_EQ(up->value.shape(), (Shape{1, 2, 32, 32}));
    for (float f : up->value.data()) EXPECT_EQ(f, 0.3f);
    EXPECT_THROW(bilinear_upsample(v, 1), DimensionError);
}

TEST(Activation, ValuesAndRange) {
    auto x = make_leaf(Tensor<double>(Shape{1, 1, 1, 2}, {0.0, -1.0}), true);
    auto s = sigmoid(x);
    EXPECT_DOUBLE_EQ(s->value[0], 0.5);
    EXPECT_DOUBLE_EQ(relu(x)->value[1], 0.0);
    backward(sum(s));
    EXPECT_DOUBLE_EQ(x->grad[0], 0.25);
    auto fd = grad_check([](const Var<double>& v) { return sum(sigmoid(v)); },
                         Tensor<double>(Shape{1, 1, 1, 1}, 0.0));
    EXPECT_TRUE(fd.pass) << fd.max_rel_err;

    auto big = make_leaf(random_tensor<float>(Shape{1, 1, 10, 10}, 2, -60, 60));
    const auto sig_out = sigmoid(big);
    const auto relu_out = relu(big);
    for (float v : sig_out->value.data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
    for (float v : relu_out->value.data()) EXPECT_GE(v, 0.0f);
}

struct BnFixture {
    Var<double> gamma, beta;
    RunningStats<double> running;
    explicit BnFixture(std::size_t c, double g = 1.0, double b = 0.0)
        : gamma(make_leaf(Tensor<double>(Shape{1, c, 1, 1}, g), true)),
          beta(make_leaf(Tensor<double>(Shape{1, c, 1, 1}, b), true)) {}
};

TEST(BatchNorm, NormalizesTwoValues) {
    BnFixture bn(1);
    auto x = make_leaf(Tensor<double>(Shape{2, 1, 1, 1}, {1.0, 3.0}));
    auto y = batchnorm2d(x, bn.gamma, bn.beta, bn.running, Mode::Train, BatchNormOptions{0.1, 1e-12});
    EXPECT_NEAR(y->value[0], -1.0, 1e-9);
    EXPECT_NEAR(y->value[1], 1.0, 1e-9);
}

TEST(BatchNorm, TrainModeMomentsAndRunningUpdate) {
    BnFixture bn(3);
    auto x = make_leaf(random_tensor<float>(Shape{4, 3, 5, 5}, 11, -3, 7).cast<double>());
    auto y = batchnorm2d(x, bn.gamma, bn.beta, bn.running, Mode::Train);
    auto st = kernels::batch_stats(y->value);
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_NEAR(st.mean[j], 0.0, 1e-5);
        EXPECT_NEAR(st.var[j], 1.0, 1e-4);
    }
    auto xs = kernels::batch_stats(x->value);
    const double n = 100.0;
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_NEAR(bn.running.mean[j], 0.1 * xs.mean[j], 1e-12);
        EXPECT_NEAR(bn.running.var[j], 0.9 + 0.1 * xs.var[j] * n / (n - 1), 1e-12);
    }
}

TEST(BatchNorm, AffineOnZeroFieldAndEvalErrors) {
    BnFixture bn(2, 2.0, 5.0);
    auto x = make_leaf(Tensor<double>(Shape{2, 2, 3, 3}, 0.0));
    const auto y0 = batchnorm2d(x, bn.gamma, bn.beta, bn.running, Mode::Train);
    for (double v : y0->value.data()) EXPECT_NEAR(v, 5.0, 1e-12);

    BnFixture fresh(2);
    EXPECT_THROW(batchnorm2d(x, fresh.gamma, fresh.beta, fresh.running, Mode::Eval), UninitializedStatisticsError);
    fresh.running = {{0.0, 0.0}, {1.0, 1.0}, true};
    auto y = batchnorm2d(make_leaf(Tensor<double>(Shape{1, 2, 1, 1}, 3.0)), fresh.gamma, fresh.beta, fresh.running,
                         Mode::Eval);
    EXPECT_NEAR(y->value[0], 3.0 / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(Concat, ChannelsAndSplit) {
    auto a = random_tensor<float>(Shape{2, 3, 4, 4}, 1);
    auto b = random_tensor<float>(Shape{2, 5, 4, 4}, 2);
    const Tensor<float>* parts[] = {&a, &b};
    auto c = kernels::concat_channels<float>(parts);
    EXPECT_EQ(c.shape().c, 8u);
    const std::size_t sizes[] = {3, 5};
    auto back = kernels::split_channels(c, sizes);
    EXPECT_TRUE(back[0].bitwise_equal(a));
    EXPECT_TRUE(back[1].bitwise_equal(b));

    std::vector<Var<float>> four;
    for (int k = 0; k < 4; ++k) four.push_back(make_leaf(Tensor<float>(Shape{1, 16, 2, 2})));
    EXPECT_EQ(concat_channels<float>(four)->value.shape().c, 64u);

    auto bad = random_tensor<float>(Shape{2, 5, 4, 3}, 2);
    const Tensor<float>* mism[] = {&a, &bad};
    EXPECT_THROW(kernels::concat_channels<float>(mism), DimensionError);
}

TEST(Elementwise, AddMulBroadcast) {
    auto a = make_leaf(random_tensor(Shape{2, 3, 4, 4}, 5));
    auto zero = make_leaf(Tensor<double>(a->value.shape()));
    EXPECT_TRUE(add(a, zero)->value.bitwise_equal(a->value));
    auto ones = make_leaf(Tensor<double>(Shape{2, 3, 1, 1}, 1.0));
    EXPECT_TRUE(mul(a, ones)->value.bitwise_equal(a->value));
    auto p = make_leaf(Tensor<double>(Shape{1, 1, 1, 2}, {1.0, 2.0}));
    auto q = make_leaf(Tensor<double>(Shape{1, 1, 1, 2}, {3.0, 4.0}));
    auto m = mul(p, q);
    EXPECT_DOUBLE_EQ(m->value[0], 3.0);
    EXPECT_DOUBLE_EQ(m->value[1], 8.0);
    auto bad = make_leaf(Tensor<double>(Shape{2, 2, 1, 1}));
    EXPECT_THROW(add(a, bad), DimensionError);
}

TEST(Backward, SumReluAndErrors) {
    auto x = make_leaf(random_tensor(Shape{1, 2, 3, 3}, 8), true);
    auto loss = sum(x);
    backward(loss);
    for (double g : x->grad.data()) EXPECT_DOUBLE_EQ(g, 1.0);
    EXPECT_DOUBLE_EQ(loss->grad[0], 1.0);

    auto neg = make_leaf(Tensor<double>(Shape{1, 1, 3, 3}, -1.0), true);
    backward(sum(relu(neg)));
    for (double g : neg->grad.data()) EXPECT_DOUBLE_EQ(g, 0.0);

    EXPECT_THROW(backward(relu(neg)), DimensionError);
}

TEST(Backward, SharedNodesAccumulateAndRepeatedCallsAdd) {
    auto x = make_leaf(Tensor<double>(Shape{1, 1, 1, 1}, 3.0), true);
    auto y = mul(x, x);            // dy/dx = 2x
    auto loss = sum(add(y, x));    // 2x + 1 = 7
    backward(loss);
    EXPECT_DOUBLE_EQ(x->grad[0], 7.0);
    backward(loss);
    EXPECT_DOUBLE_EQ(x->grad[0], 14.0);
}

TEST(Backward, NoGradGuardDetaches) {
    auto x = make_leaf(Tensor<double>(Shape{1, 1, 2, 2}, 1.0), true);
    NoGradGuard guard;
    auto y = relu(x);
    EXPECT_FALSE(y->requires_grad);
    EXPECT_TRUE(y->inputs.empty());
}

TEST(Backward, CompositeConvBnReluPoolMatchesFiniteDifferences) {
    auto w = make_leaf(random_tensor(Shape{4, 2, 3, 3}, 21), true);
    auto gamma = make_leaf(random_tensor(Shape{1, 4, 1, 1}, 22, 0.5, 1.5), true);
    auto beta = make_leaf(random_tensor(Shape{1, 4, 1, 1}, 23), true);
    auto x = make_leaf(random_tensor(Shape{2, 2, 8, 8}, 24), true);
    auto r = random_tensor(Shape{2, 4, 4, 4}, 25);
    RunningStats<double> running;
    auto f = [&] {
        auto h = conv2d(x, w, Var<double>{}, ConvGeometry{1, 2, 2});
        h = batchnorm2d(h, gamma, beta, running, Mode::Train);
        return weighted_sum(maxpool2d(relu(h), 2, 2), r);
    };
    const Var<double> leaves[] = {x, w, gamma, beta};
    auto rep = grad_check_leaves(f, leaves, GradCheckOptions{1e-4, 4096, 1});
    EXPECT_TRUE(rep.pass) << rep.max_rel_err << " at " << rep.worst;
}

TEST(GradCheck, SigmoidDilatedConvAndNegativeControl) {
    auto x = random_tensor(Shape{1, 2, 9, 9}, 31);
    auto sig = grad_check([](const Var<double>& v) { return sum(sigmoid(v)); }, x);
    EXPECT_TRUE(sig.pass);

    auto w = make_leaf(random_tensor(Shape{2, 2, 3, 3}, 32));
    auto conv = grad_check([&](const Var<double>& v) { return sum(conv2d(v, w, {}, ConvGeometry{1, 3, 3})); }, x);
    EXPECT_TRUE(conv.pass) << conv.max_rel_err;

    // A square op whose backward forgets the factor of two.
    auto broken = [](const Var<double>& v) {
        Tensor<double> out(v->value.shape());
        for (std::size_t k = 0; k < out.numel(); ++k) out[k] = v->value[k] * v->value[k];
        auto sq = make_result<double>(std::move(out), "bad_square", {v}, [](Node<double>& self) {
            Tensor<double> g(self.value.shape());
            for (std::size_t k = 0; k < g.numel(); ++k) g[k] = self.grad[k] * self.inputs[0]->value[k];
            self.inputs[0]->accumulate(g);
        });
        return sum(sq);
    };
    EXPECT_FALSE(grad_check(broken, x).pass);
}

TEST(GradCheck, NonFiniteIsReportedAsFailure) {
    auto f = [](const Var<double>& v) {
        Tensor<double> out(Shape{1, 1, 1, 1}, std::log(v->value[0]));
        return make_result<double>(std::move(out), "log", {v}, [](Node<double>& self) {
            self.inputs[0]->accumulate(Tensor<double>(Shape{1, 1, 1, 1}, self.grad[0] / self.inputs[0]->value[0]));
        });
    };
    auto rep = grad_check(f, Tensor<double>(Shape{1, 1, 1, 1}, 0.0));
    EXPECT_FALSE(rep.finite);
    EXPECT_FALSE(rep.pass);
}

TEST(Determinism, IdenticalSeedsBitwise) {
    auto run = [] {
        auto x = make_leaf(random_tensor<float>(Shape{2, 3, 16, 16}, 77), true);
        auto w = make_leaf(random_tensor<float>(Shape{4, 3, 3, 3}, 78), true);
        auto y = maxpool2d(relu(conv2d(x, w, {}, ConvGeometry{1, 3, 3})), 2, 2);
        backward(sum(bilinear_upsample(y, 2)));
        return std::pair{y->value, w->grad};
    };
    auto [a, ga] = run();
    auto [b, gb] = run();
    EXPECT_TRUE(a.bitwise_equal(b));
    EXPECT_TRUE(ga.bitwise_equal(gb));
}

TEST(MacTally, CountsConvAndElementwise) {
    MacTally tally;
    {
        ScopedMacTally scope(tally);
        auto x = make_leaf(Tensor<float>(Shape{1, 3, 64, 64}));
        auto w = make_leaf(Tensor<float>(Shape{16, 3, 3, 3}));
        auto y = relu(conv2d(x, w, {}, ConvGeometry{1, 1, 1}));
    }
    EXPECT_EQ(tally.by_op["conv2d"], 1769472u);
    EXPECT_EQ(tally.by_op["relu"], 65536u);
}

}  // namespace
}  // namespace dseg
