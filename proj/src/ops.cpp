#include "dsegnet/ops.hpp"

#include <cmath>
#include <memory>
#include <utility>

#include "dsegnet/error.hpp"

namespace dseg {
namespace {

thread_local MacTally* g_tally = nullptr;

void tally(const char* op, std::uint64_t macs) {
    if (g_tally) g_tally->add(op, macs);
}

template <typename T>
std::span<const T> span_of(const Var<T>& v) {
    return v ? v->value.data() : std::span<const T>{};
}

enum class Broadcast { Same, PerChannel, PerPosition };

Broadcast classify(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return Broadcast::Same;
    if (b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1) return Broadcast::PerChannel;
    if (b.n == a.n && b.c == 1 && b.h == a.h && b.w == a.w) return Broadcast::PerPosition;
    throw DimensionError(std::string(op) + ": cannot broadcast " + b.str() + " onto " + a.str());
}

// Index of b's element paired with a's flat index k.
struct BroadcastIndex {
    Broadcast kind;
    Shape a;
    std::size_t operator()(std::size_t k) const {
        switch (kind) {
            case Broadcast::Same:
                return k;
            case Broadcast::PerChannel:
                return k / a.plane();
            case Broadcast::PerPosition: {
                const std::size_t hw = a.plane();
                return (k / (a.c * hw)) * hw + k % hw;
            }
        }
        return k;
    }
};

}  // namespace

ScopedMacTally::ScopedMacTally(MacTally& tally) : previous_(g_tally) { g_tally = &tally; }
ScopedMacTally::~ScopedMacTally() { g_tally = previous_; }

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ConvGeometry& g) {
    Tensor<T> out = kernels::conv2d(x->value, weight->value, span_of(bias), g);
    const Shape& os = out.shape();
    const Shape& ws = weight->value.shape();
    tally("conv2d", static_cast<std::uint64_t>(os.n) * os.h * os.w * ws.n * ws.c * ws.h * ws.w);
    std::vector<Var<T>> inputs{x, weight};
    if (bias) inputs.push_back(bias);
    return make_result<T>(std::move(out), "conv2d", std::move(inputs), [g](Node<T>& self) {
        const Var<T>& xin = self.inputs[0];
        const Var<T>& w = self.inputs[1];
        const bool has_bias = self.inputs.size() > 2;
        auto grads = kernels::conv2d_backward(xin->value, w->value, self.grad, g, xin->requires_grad,
                                              w->requires_grad, has_bias && self.inputs[2]->requires_grad);
        if (xin->requires_grad) xin->accumulate(grads.input);
        if (w->requires_grad) w->accumulate(grads.weight);
        if (has_bias && self.inputs[2]->requires_grad) self.inputs[2]->accumulate(std::span<const T>(grads.bias));
    });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
    auto r = kernels::maxpool2d(x->value, kernel, stride, padding);
    tally("maxpool2d", r.out.numel());
    auto argmax = std::make_shared<std::vector<std::size_t>>(std::move(r.argmax));
    return make_result<T>(std::move(r.out), "maxpool2d", {x}, [argmax](Node<T>& self) {
        Tensor<T> gin(self.inputs[0]->value.shape());
        kernels::scatter_argmax(self.grad, std::span<const std::size_t>(*argmax), gin);
        self.inputs[0]->accumulate(gin);
    });
}

template <typename T>
Var<T> global_pool(const Var<T>& x, PoolMode mode) {
    auto r = kernels::global_pool(x->value, mode);
    tally("global_pool", r.out.numel());
    auto argmax = std::make_shared<std::vector<std::size_t>>(std::move(r.argmax));
    return make_result<T>(std::move(r.out), "global_pool", {x}, [argmax, mode](Node<T>& self) {
        const Shape& xs = self.inputs[0]->value.shape();
        Tensor<T> gin(xs);
        if (mode == PoolMode::Max) {
            kernels::scatter_argmax(self.grad, std::span<const std::size_t>(*argmax), gin);
        } else {
            const std::size_t hw = xs.plane();
            const T scale = T(1) / static_cast<T>(hw);
            for (std::size_t q = 0; q < xs.n * xs.c; ++q) {
                const T g = self.grad[q] * scale;
                T* p = gin.ptr() + q * hw;
                for (std::size_t k = 0; k < hw; ++k) p[k] = g;
            }
        }
        self.inputs[0]->accumulate(gin);
    });
}

template <typename T>
Var<T> channel_reduce(const Var<T>& x, PoolMode mode) {
    auto r = kernels::channel_reduce(x->value, mode);
    tally("channel_reduce", r.out.numel());
    auto argmax = std::make_shared<std::vector<std::size_t>>(std::move(r.argmax));
    return make_result<T>(std::move(r.out), "channel_reduce", {x}, [argmax, mode](Node<T>& self) {
        const Shape& xs = self.inputs[0]->value.shape();
        Tensor<T> gin(xs);
        if (mode == PoolMode::Max) {
            kernels::scatter_argmax(self.grad, std::span<const std::size_t>(*argmax), gin);
        } else {
            const std::size_t hw = xs.plane();
            const T scale = T(1) / static_cast<T>(xs.c);
            for (std::size_t i = 0; i < xs.n; ++i) {
                const T* g = self.grad.plane(i, 0);
                for (std::size_t j = 0; j < xs.c; ++j) {
                    T* p = gin.plane(i, j);
                    for (std::size_t k = 0; k < hw; ++k) p[k] = g[k] * scale;
                }
            }
        }
        self.inputs[0]->accumulate(gin);
    });
}

template <typename T>
Var<T> bilinear_upsample(const Var<T>& x, std::size_t scale) {
    if (scale < 2) throw DimensionError("bilinear_upsample: scale must be >= 2, got " + std::to_string(scale));
    const Shape& xs = x->value.shape();
    Tensor<T> out = kernels::bilinear_resize(x->value, xs.h * scale, xs.w * scale);
    tally("bilinear_upsample", out.numel());
    return make_result<T>(std::move(out), "bilinear_upsample", {x}, [](Node<T>& self) {
        self.inputs[0]->accumulate(kernels::bilinear_resize_backward(self.grad, self.inputs[0]->value.shape()));
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = kernels::relu(x->value);
    tally("relu", out.numel());
    return make_result<T>(std::move(out), "relu", {x}, [](Node<T>& self) {
        const Tensor<T>& xin = self.inputs[0]->value;
        Tensor<T> gin(xin.shape());
        for (std::size_t k = 0; k < gin.numel(); ++k) gin[k] = xin[k] > T(0) ? self.grad[k] : T(0);
        self.inputs[0]->accumulate(gin);
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out = kernels::sigmoid(x->value);
    tally("sigmoid", out.numel());
    return make_result<T>(std::move(out), "sigmoid", {x}, [](Node<T>& self) {
        Tensor<T> gin(self.value.shape());
        for (std::size_t k = 0; k < gin.numel(); ++k) {
            const T s = self.value[k];
            gin[k] = self.grad[k] * s * (T(1) - s);
        }
        self.inputs[0]->accumulate(gin);
    });
}

template <typename T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, RunningStats<T>& running, Mode mode,
                   const BatchNormOptions& opt) {
    const Shape& xs = x->value.shape();
    const T eps = static_cast<T>(opt.eps);
    auto cache = std::make_shared<kernels::BatchNormCache<T>>();
    Tensor<T> out;
    const bool train = mode == Mode::Train;
    if (train) {
        auto st = kernels::batch_stats(x->value);
        out = kernels::batchnorm_apply<T>(x->value, st.mean, st.var, gamma->value.data(), beta->value.data(), eps,
                                          cache.get());
        const std::size_t count = xs.n * xs.plane();
        const double m = opt.momentum;
        if (!running.initialized) {
            running.mean.assign(xs.c, T(0));
            running.var.assign(xs.c, T(1));
            running.initialized = true;
        }
        for (std::size_t j = 0; j < xs.c; ++j) {
            const double unbiased =
                count > 1 ? static_cast<double>(st.var[j]) * count / static_cast<double>(count - 1) : st.var[j];
            running.mean[j] = static_cast<T>((1.0 - m) * running.mean[j] + m * st.mean[j]);
            running.var[j] = static_cast<T>((1.0 - m) * running.var[j] + m * unbiased);
        }
    } else {
        if (!running.initialized) {
            throw UninitializedStatisticsError("batchnorm2d: uninitialized statistics (eval mode before any "
                                               "running statistics were recorded or loaded)");
        }
        out = kernels::batchnorm_apply<T>(x->value, running.mean, running.var, gamma->value.data(),
                                          beta->value.data(), eps, cache.get());
    }
    tally("batchnorm2d", out.numel());
    return make_result<T>(std::move(out), "batchnorm2d", {x, gamma, beta}, [cache, train](Node<T>& self) {
        const Var<T>& xin = self.inputs[0];
        const Var<T>& gm = self.inputs[1];
        const Var<T>& bt = self.inputs[2];
        const Shape& s = xin->value.shape();
        const std::size_t hw = s.plane();
        const double count = static_cast<double>(s.n * hw);
        const Tensor<T>& xhat = cache->normalized;
        std::vector<T> dgamma(s.c), dbeta(s.c);
        Tensor<T> gin(xin->requires_grad ? s : Shape{});
        for (std::size_t j = 0; j < s.c; ++j) {
            double sg = 0, sgx = 0;
            for (std::size_t i = 0; i < s.n; ++i) {
                const T* g = self.grad.plane(i, j);
                const T* xh = xhat.plane(i, j);
                for (std::size_t k = 0; k < hw; ++k) {
                    sg += g[k];
                    sgx += static_cast<double>(g[k]) * xh[k];
                }
            }
            dgamma[j] = static_cast<T>(sgx);
            dbeta[j] = static_cast<T>(sg);
            if (!xin->requires_grad) continue;
            const T scale = gm->value[j] * cache->inv_std[j];
            const T mean_g = static_cast<T>(sg / count);
            const T mean_gx = static_cast<T>(sgx / count);
            for (std::size_t i = 0; i < s.n; ++i) {
                const T* g = self.grad.plane(i, j);
                const T* xh = xhat.plane(i, j);
                T* d = gin.plane(i, j);
                for (std::size_t k = 0; k < hw; ++k) {
                    d[k] = train ? scale * (g[k] - mean_g - xh[k] * mean_gx) : scale * g[k];
                }
            }
        }
        if (xin->requires_grad) xin->accumulate(gin);
        if (gm->requires_grad) gm->accumulate(std::span<const T>(dgamma));
        if (bt->requires_grad) bt->accumulate(std::span<const T>(dbeta));
    });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
    std::vector<const Tensor<T>*> values;
    values.reserve(parts.size());
    for (const auto& p : parts) values.push_back(&p->value);
    Tensor<T> out = kernels::concat_channels<T>(values);
    std::vector<Var<T>> inputs(parts.begin(), parts.end());
    return make_result<T>(std::move(out), "concat_channels", std::move(inputs), [](Node<T>& self) {
        std::vector<std::size_t> channels;
        for (const auto& in : self.inputs) channels.push_back(in->value.shape().c);
        auto pieces = kernels::split_channels(self.grad, std::span<const std::size_t>(channels));
        for (std::size_t k = 0; k < pieces.size(); ++k) {
            if (self.inputs[k]->requires_grad) self.inputs[k]->accumulate(pieces[k]);
        }
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    const Shape& as = a->value.shape();
    const BroadcastIndex idx{classify(as, b->value.shape(), "add"), as};
    Tensor<T> out(as);
    for (std::size_t k = 0; k < out.numel(); ++k) out[k] = a->value[k] + b->value[idx(k)];
    tally("add", out.numel());
    return make_result<T>(std::move(out), "add", {a, b}, [idx](Node<T>& self) {
        if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
        const Var<T>& bv = self.inputs[1];
        if (bv->requires_grad) {
            Tensor<T> gb(bv->value.shape());
            for (std::size_t k = 0; k < self.grad.numel(); ++k) gb[idx(k)] += self.grad[k];
            bv->accumulate(gb);
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    const Shape& as = a->value.shape();
    const BroadcastIndex idx{classify(as, b->value.shape(), "mul"), as};
    Tensor<T> out(as);
    for (std::size_t k = 0; k < out.numel(); ++k) out[k] = a->value[k] * b->value[idx(k)];
    tally("mul", out.numel());
    return make_result<T>(std::move(out), "mul", {a, b}, [idx](Node<T>& self) {
        const Var<T>& av = self.inputs[0];
        const Var<T>& bv = self.inputs[1];
        if (av->requires_grad) {
            Tensor<T> ga(av->value.shape());
            for (std::size_t k = 0; k < ga.numel(); ++k) ga[k] = self.grad[k] * bv->value[idx(k)];
            av->accumulate(ga);
        }
        if (bv->requires_grad) {
            Tensor<T> gb(bv->value.shape());
            for (std::size_t k = 0; k < self.grad.numel(); ++k) gb[idx(k)] += self.grad[k] * av->value[k];
            bv->accumulate(gb);
        }
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    double s = 0;
    for (T v : x->value.data()) s += v;
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(s));
    return make_result<T>(std::move(out), "sum", {x}, [](Node<T>& self) {
        self.inputs[0]->accumulate(Tensor<T>(self.inputs[0]->value.shape(), self.grad[0]));
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    const std::size_t n = x->value.numel();
    if (n == 0) throw DimensionError("mean: empty tensor");
    double s = 0;
    for (T v : x->value.data()) s += v;
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(s / static_cast<double>(n)));
    return make_result<T>(std::move(out), "mean", {x}, [n](Node<T>& self) {
        self.inputs[0]->accumulate(
            Tensor<T>(self.inputs[0]->value.shape(), self.grad[0] / static_cast<T>(n)));
    });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
    if (!(x->value.shape() == weights.shape())) {
        throw DimensionError("weighted_sum: weights " + weights.shape().str() + " vs " + x->value.shape().str());
    }
    double s = 0;
    for (std::size_t k = 0; k < weights.numel(); ++k) s += static_cast<double>(x->value[k]) * weights[k];
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(s));
    return make_result<T>(std::move(out), "weighted_sum", {x}, [weights](Node<T>& self) {
        Tensor<T> g(weights.shape());
        for (std::size_t k = 0; k < g.numel(); ++k) g[k] = weights[k] * self.grad[0];
        self.inputs[0]->accumulate(g);
    });
}

#define DSEG_INSTANTIATE(T)                                                                                  \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, const ConvGeometry&);                \
    template Var<T> maxpool2d(const Var<T>&, std::size_t, std::size_t, std::size_t);                         \
    template Var<T> global_pool(const Var<T>&, PoolMode);                                                    \
    template Var<T> channel_reduce(const Var<T>&, PoolMode);                                                 \
    template Var<T> bilinear_upsample(const Var<T>&, std::size_t);                                           \
    template Var<T> relu(const Var<T>&);                                                                     \
    template Var<T> sigmoid(const Var<T>&);                                                                  \
    template Var<T> batchnorm2d(const Var<T>&, const Var<T>&, const Var<T>&, RunningStats<T>&, Mode,         \
                                const BatchNormOptions&);                                                    \
    template Var<T> concat_channels(std::span<const Var<T>>);                                                \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                       \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                       \
    template Var<T> sum(const Var<T>&);                                                                      \
    template Var<T> mean(const Var<T>&);                                                                     \
    template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);

DSEG_INSTANTIATE(float)
DSEG_INSTANTIATE(double)
#undef DSEG_INSTANTIATE

}  // namespace dseg
