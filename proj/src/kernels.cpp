#include "dsegnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dsegnet/error.hpp"

namespace dseg {

std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g) {
    if (k < 1 || g.stride < 1 || g.dilation < 1) {
        throw DimensionError("conv2d: kernel, stride and dilation must be >= 1 (k=" + std::to_string(k) +
                             ", s=" + std::to_string(g.stride) + ", d=" + std::to_string(g.dilation) + ")");
    }
    const long long span = static_cast<long long>(g.dilation * (k - 1) + 1);
    const long long room = static_cast<long long>(in + 2 * g.padding) - span;
    if (room < 0) {
        throw DimensionError("conv2d: non-positive output extent (in=" + std::to_string(in) +
                             ", k=" + std::to_string(k) + ", p=" + std::to_string(g.padding) +
                             ", d=" + std::to_string(g.dilation) + ", s=" + std::to_string(g.stride) + ")");
    }
    return static_cast<std::size_t>(room) / g.stride + 1;
}

Shape conv2d_output_shape(const Shape& x, const Shape& weight, const ConvGeometry& g) {
    if (x.c != weight.c) {
        throw DimensionError("conv2d: input " + x.str() + " has " + std::to_string(x.c) +
                             " channels but weight " + weight.str() + " expects " + std::to_string(weight.c));
    }
    return Shape{x.n, weight.n, conv_out_extent(x.h, weight.h, g), conv_out_extent(x.w, weight.w, g)};
}

std::size_t pool_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t pad) {
    if (k < 1 || s < 1) throw DimensionError("pool: kernel and stride must be >= 1");
    if (in + 2 * pad < k) {
        throw DimensionError("pool: window " + std::to_string(k) + " larger than input extent " +
                             std::to_string(in) + " (padding " + std::to_string(pad) + ")");
    }
    return (in + 2 * pad - k) / s + 1;
}

namespace kernels {
namespace {

template <typename T>
void check_bias(std::span<const T> bias, std::size_t co) {
    if (!bias.empty() && bias.size() != co) {
        throw DimensionError("conv2d: bias length " + std::to_string(bias.size()) + " != out channels " +
                             std::to_string(co));
    }
}

// col[k][p] for one sample, k = (j*kh + u)*kw + v, p = oy*wo + ox.
template <typename T>
void im2col(const T* x, const Shape& xs, const Shape& ws, const ConvGeometry& g, std::size_t ho, std::size_t wo,
            T* col) {
    const std::size_t P = ho * wo;
    const long long H = static_cast<long long>(xs.h), W = static_cast<long long>(xs.w);
    for (std::size_t j = 0; j < xs.c; ++j) {
        const T* xp = x + j * xs.plane();
        for (std::size_t u = 0; u < ws.h; ++u) {
            for (std::size_t v = 0; v < ws.w; ++v) {
                T* row = col + ((j * ws.h + u) * ws.w + v) * P;
                const long long dy = static_cast<long long>(u * g.dilation) - static_cast<long long>(g.padding);
                const long long dx = static_cast<long long>(v * g.dilation) - static_cast<long long>(g.padding);
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long long iy = static_cast<long long>(oy * g.stride) + dy;
                    T* r = row + oy * wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(r, r + wo, T(0));
                        continue;
                    }
                    const T* src = xp + iy * W;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long long ix = static_cast<long long>(ox * g.stride) + dx;
                        r[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const Shape& xs, const Shape& ws, const ConvGeometry& g, std::size_t ho,
                std::size_t wo, T* gx) {
    const std::size_t P = ho * wo;
    const long long H = static_cast<long long>(xs.h), W = static_cast<long long>(xs.w);
    for (std::size_t j = 0; j < xs.c; ++j) {
        T* gp = gx + j * xs.plane();
        for (std::size_t u = 0; u < ws.h; ++u) {
            for (std::size_t v = 0; v < ws.w; ++v) {
                const T* row = col + ((j * ws.h + u) * ws.w + v) * P;
                const long long dy = static_cast<long long>(u * g.dilation) - static_cast<long long>(g.padding);
                const long long dx = static_cast<long long>(v * g.dilation) - static_cast<long long>(g.padding);
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long long iy = static_cast<long long>(oy * g.stride) + dy;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = gp + iy * W;
                    const T* r = row + oy * wo;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long long ix = static_cast<long long>(ox * g.stride) + dx;
                        if (ix >= 0 && ix < W) dst[ix] += r[ox];
                    }
                }
            }
        }
    }
}

// C[M][P] += A[M][K] * B[K][P], each C element accumulated in ascending k.
template <typename T>
void gemm_acc(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t P) {
    constexpr std::size_t kChunk = 512;
    for (std::size_t p0 = 0; p0 < P; p0 += kChunk) {
        const std::size_t pn = std::min(kChunk, P - p0);
        std::size_t m = 0;
        for (; m + 4 <= M; m += 4) {
            T* c0 = C + (m + 0) * P + p0;
            T* c1 = C + (m + 1) * P + p0;
            T* c2 = C + (m + 2) * P + p0;
            T* c3 = C + (m + 3) * P + p0;
            const T* a0 = A + (m + 0) * K;
            const T* a1 = A + (m + 1) * K;
            const T* a2 = A + (m + 2) * K;
            const T* a3 = A + (m + 3) * K;
            for (std::size_t k = 0; k < K; ++k) {
                const T w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
                const T* b = B + k * P + p0;
                for (std::size_t p = 0; p < pn; ++p) {
                    const T bv = b[p];
                    c0[p] += w0 * bv;
                    c1[p] += w1 * bv;
                    c2[p] += w2 * bv;
                    c3[p] += w3 * bv;
                }
            }
        }
        for (; m < M; ++m) {
            T* c0 = C + m * P + p0;
            const T* a0 = A + m * K;
            for (std::size_t k = 0; k < K; ++k) {
                const T w0 = a0[k];
                const T* b = B + k * P + p0;
                for (std::size_t p = 0; p < pn; ++p) c0[p] += w0 * b[p];
            }
        }
    }
}

// Fixed-order dot product with eight interleaved partial sums.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
    }
    T tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

bool is_pointwise(const Shape& ws, const ConvGeometry& g) {
    return ws.h == 1 && ws.w == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace

template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias,
                        const ConvGeometry& g) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    const Shape os = conv2d_output_shape(xs, ws, g);
    check_bias(bias, ws.n);
    Tensor<T> out(os);
    const long long H = static_cast<long long>(xs.h), W = static_cast<long long>(xs.w);
    for (std::size_t i = 0; i < os.n; ++i) {
        for (std::size_t o = 0; o < os.c; ++o) {
            for (std::size_t y = 0; y < os.h; ++y) {
                for (std::size_t xo = 0; xo < os.w; ++xo) {
                    T acc = 0;
                    for (std::size_t j = 0; j < xs.c; ++j) {
                        for (std::size_t u = 0; u < ws.h; ++u) {
                            const long long iy = static_cast<long long>(y * g.stride + u * g.dilation) -
                                                 static_cast<long long>(g.padding);
                            for (std::size_t v = 0; v < ws.w; ++v) {
                                const long long ix = static_cast<long long>(xo * g.stride + v * g.dilation) -
                                                     static_cast<long long>(g.padding);
                                const T xv = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                                 ? x.at(i, j, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))
                                                 : T(0);
                                acc += weight.at(o, j, u, v) * xv;
                            }
                        }
                    }
                    out.at(i, o, y, xo) = bias.empty() ? acc : acc + bias[o];
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias, const ConvGeometry& g) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    const Shape os = conv2d_output_shape(xs, ws, g);
    check_bias(bias, ws.n);
    Tensor<T> out(os);
    const std::size_t K = ws.c * ws.h * ws.w;
    const std::size_t P = os.h * os.w;
    const bool pointwise = is_pointwise(ws, g);
    std::vector<T> col(pointwise ? 0 : K * P);
    for (std::size_t i = 0; i < xs.n; ++i) {
        const T* xi = x.plane(i, 0);
        const T* B = xi;
        if (!pointwise) {
            im2col(xi, xs, ws, g, os.h, os.w, col.data());
            B = col.data();
        }
        T* C = out.plane(i, 0);
        gemm_acc(weight.ptr(), B, C, ws.n, K, P);
        if (!bias.empty()) {
            for (std::size_t o = 0; o < ws.n; ++o) {
                T* c = C + o * P;
                for (std::size_t p = 0; p < P; ++p) c[p] += bias[o];
            }
        }
    }
    return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                               const ConvGeometry& g, bool need_input, bool need_weight, bool need_bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    const Shape os = conv2d_output_shape(xs, ws, g);
    if (!(grad_out.shape() == os)) {
        throw DimensionError("conv2d backward: grad " + grad_out.shape().str() + " != output " + os.str());
    }
    const std::size_t K = ws.c * ws.h * ws.w;
    const std::size_t P = os.h * os.w;
    const std::size_t CO = ws.n;
    const bool pointwise = is_pointwise(ws, g);

    Conv2dGrads<T> grads;
    if (need_input) grads.input = Tensor<T>(xs);
    if (need_weight) grads.weight = Tensor<T>(ws);
    if (need_bias) grads.bias.assign(CO, T(0));

    std::vector<T> wt;  // weight transposed to [K][CO]
    if (need_input) {
        wt.resize(K * CO);
        for (std::size_t o = 0; o < CO; ++o)
            for (std::size_t k = 0; k < K; ++k) wt[k * CO + o] = weight[o * K + k];
    }
    std::vector<T> col(pointwise ? 0 : K * P);
    std::vector<T> gcol(need_input && !pointwise ? K * P : 0);

    for (std::size_t i = 0; i < xs.n; ++i) {
        const T* gy = grad_out.plane(i, 0);
        if (need_bias) {
            for (std::size_t o = 0; o < CO; ++o) {
                const T* r = gy + o * P;
                T s = 0;
                for (std::size_t p = 0; p < P; ++p) s += r[p];
                grads.bias[o] += s;
            }
        }
        if (need_weight) {
            const T* B = x.plane(i, 0);
            if (!pointwise) {
                im2col(B, xs, ws, g, os.h, os.w, col.data());
                B = col.data();
            }
            T* gw = grads.weight.ptr();
            for (std::size_t o = 0; o < CO; ++o) {
                const T* r = gy + o * P;
                for (std::size_t k = 0; k < K; ++k) gw[o * K + k] += dot(r, B + k * P, P);
            }
        }
        if (need_input) {
            if (pointwise) {
                gemm_acc(wt.data(), gy, grads.input.plane(i, 0), K, CO, P);
            } else {
                std::fill(gcol.begin(), gcol.end(), T(0));
                gemm_acc(wt.data(), gy, gcol.data(), K, CO, P);
                col2im_add(gcol.data(), xs, ws, g, os.h, os.w, grads.input.plane(i, 0));
            }
        }
    }
    return grads;
}

template <typename T>
Tensor<T> inflate_kernel(const Tensor<T>& weight, std::size_t dilation) {
    const Shape& ws = weight.shape();
    const std::size_t kh = ws.h + (ws.h - 1) * (dilation - 1);
    const std::size_t kw = ws.w + (ws.w - 1) * (dilation - 1);
    Tensor<T> out(Shape{ws.n, ws.c, kh, kw});
    for (std::size_t o = 0; o < ws.n; ++o)
        for (std::size_t j = 0; j < ws.c; ++j)
            for (std::size_t u = 0; u < ws.h; ++u)
                for (std::size_t v = 0; v < ws.w; ++v) out.at(o, j, u * dilation, v * dilation) = weight.at(o, j, u, v);
    return out;
}

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
    const Shape& xs = x.shape();
    if (padding >= kernel && padding > 0) throw DimensionError("maxpool2d: padding must be smaller than the kernel");
    const std::size_t ho = pool_out_extent(xs.h, kernel, stride, padding);
    const std::size_t wo = pool_out_extent(xs.w, kernel, stride, padding);
    PoolResult<T> r{Tensor<T>(Shape{xs.n, xs.c, ho, wo}), {}};
    r.argmax.resize(r.out.numel());
    const long long H = static_cast<long long>(xs.h), W = static_cast<long long>(xs.w);
    std::size_t q = 0;
    for (std::size_t i = 0; i < xs.n; ++i) {
        for (std::size_t j = 0; j < xs.c; ++j) {
            const std::size_t base = (i * xs.c + j) * xs.plane();
            const T* xp = x.ptr() + base;
            for (std::size_t oy = 0; oy < ho; ++oy) {
                const long long y0 = static_cast<long long>(oy * stride) - static_cast<long long>(padding);
                for (std::size_t ox = 0; ox < wo; ++ox, ++q) {
                    const long long x0 = static_cast<long long>(ox * stride) - static_cast<long long>(padding);
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_at = 0;
                    bool found = false;
                    for (long long y = std::max(0LL, y0); y < std::min(H, y0 + static_cast<long long>(kernel)); ++y) {
                        for (long long xx = std::max(0LL, x0); xx < std::min(W, x0 + static_cast<long long>(kernel));
                             ++xx) {
                            const T v = xp[y * W + xx];
                            if (!found || v > best) {
                                best = v;
                                best_at = static_cast<std::size_t>(y * W + xx);
                                found = true;
                            }
                        }
                    }
                    r.out[q] = best;
                    r.argmax[q] = base + best_at;
                }
            }
        }
    }
    return r;
}

template <typename T>
void scatter_argmax(const Tensor<T>& grad_out, std::span<const std::size_t> argmax, Tensor<T>& grad_in) {
    for (std::size_t q = 0; q < argmax.size(); ++q) grad_in[argmax[q]] += grad_out[q];
}

template <typename T>
PoolResult<T> global_pool(const Tensor<T>& x, PoolMode mode) {
    const Shape& xs = x.shape();
    if (xs.h == 0 || xs.w == 0) throw DimensionError("global_pool: empty spatial extent " + xs.str());
    PoolResult<T> r{Tensor<T>(Shape{xs.n, xs.c, 1, 1}), {}};
    const std::size_t hw = xs.plane();
    if (mode == PoolMode::Max) r.argmax.resize(xs.n * xs.c);
    for (std::size_t q = 0; q < xs.n * xs.c; ++q) {
        const T* p = x.ptr() + q * hw;
        if (mode == PoolMode::Avg) {
            double s = 0;
            for (std::size_t k = 0; k < hw; ++k) s += p[k];
            r.out[q] = static_cast<T>(s / static_cast<double>(hw));
        } else {
            std::size_t best = 0;
            for (std::size_t k = 1; k < hw; ++k)
                if (p[k] > p[best]) best = k;
            r.out[q] = p[best];
            r.argmax[q] = q * hw + best;
        }
    }
    return r;
}

template <typename T>
PoolResult<T> channel_reduce(const Tensor<T>& x, PoolMode mode) {
    const Shape& xs = x.shape();
    if (xs.c == 0) throw DimensionError("channel_reduce: no channels in " + xs.str());
    const std::size_t hw = xs.plane();
    PoolResult<T> r{Tensor<T>(Shape{xs.n, 1, xs.h, xs.w}), {}};
    if (mode == PoolMode::Max) r.argmax.resize(r.out.numel());
    for (std::size_t i = 0; i < xs.n; ++i) {
        const T* base = x.plane(i, 0);
        T* out = r.out.plane(i, 0);
        for (std::size_t k = 0; k < hw; ++k) {
            if (mode == PoolMode::Avg) {
                double s = 0;
                for (std::size_t j = 0; j < xs.c; ++j) s += base[j * hw + k];
                out[k] = static_cast<T>(s / static_cast<double>(xs.c));
            } else {
                std::size_t best = 0;
                for (std::size_t j = 1; j < xs.c; ++j)
                    if (base[j * hw + k] > base[best * hw + k]) best = j;
                out[k] = base[best * hw + k];
                r.argmax[i * hw + k] = i * xs.c * hw + best * hw + k;
            }
        }
    }
    return r;
}

AxisTaps bilinear_taps(std::size_t in, std::size_t out) {
    AxisTaps t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    const double scale = static_cast<double>(out) / static_cast<double>(in);
    const double max_src = static_cast<double>(in - 1);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) / scale - 0.5;
        src = std::clamp(src, 0.0, max_src);
        const auto lo = static_cast<std::size_t>(std::floor(src));
        t.lo[d] = lo;
        t.hi[d] = std::min(lo + 1, in - 1);
        t.frac[d] = src - static_cast<double>(lo);
    }
    return t;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    const Shape& xs = x.shape();
    if (out_h < 1 || out_w < 1 || xs.h < 1 || xs.w < 1) {
        throw DimensionError("bilinear_resize: empty extent (" + xs.str() + " -> " + std::to_string(out_h) + "x" +
                             std::to_string(out_w) + ")");
    }
    const AxisTaps ty = bilinear_taps(xs.h, out_h);
    const AxisTaps tx = bilinear_taps(xs.w, out_w);
    Tensor<T> out(Shape{xs.n, xs.c, out_h, out_w});
    for (std::size_t q = 0; q < xs.n * xs.c; ++q) {
        const T* src = x.ptr() + q * xs.plane();
        T* dst = out.ptr() + q * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ty.frac[y]);
            const T* r0 = src + ty.lo[y] * xs.w;
            const T* r1 = src + ty.hi[y] * xs.w;
            for (std::size_t xo = 0; xo < out_w; ++xo) {
                const T fx = static_cast<T>(tx.frac[xo]);
                const T top = r0[tx.lo[xo]] * (T(1) - fx) + r0[tx.hi[xo]] * fx;
                const T bot = r1[tx.lo[xo]] * (T(1) - fx) + r1[tx.hi[xo]] * fx;
                dst[y * out_w + xo] = top * (T(1) - fy) + bot * fy;
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& grad_out, const Shape& in_shape) {
    const Shape& gs = grad_out.shape();
    const AxisTaps ty = bilinear_taps(in_shape.h, gs.h);
    const AxisTaps tx = bilinear_taps(in_shape.w, gs.w);
    Tensor<T> gin(in_shape);
    for (std::size_t q = 0; q < gs.n * gs.c; ++q) {
        const T* g = grad_out.ptr() + q * gs.plane();
        T* dst = gin.ptr() + q * in_shape.plane();
        for (std::size_t y = 0; y < gs.h; ++y) {
            const T fy = static_cast<T>(ty.frac[y]);
            T* r0 = dst + ty.lo[y] * in_shape.w;
            T* r1 = dst + ty.hi[y] * in_shape.w;
            for (std::size_t xo = 0; xo < gs.w; ++xo) {
                const T fx = static_cast<T>(tx.frac[xo]);
                const T v = g[y * gs.w + xo];
                const T top = v * (T(1) - fy);
                const T bot = v * fy;
                r0[tx.lo[xo]] += top * (T(1) - fx);
                r0[tx.hi[xo]] += top * fx;
                r1[tx.lo[xo]] += bot * (T(1) - fx);
                r1[tx.hi[xo]] += bot * fx;
            }
        }
    }
    return gin;
}

template <typename T>
Tensor<T> nearest_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    const Shape& xs = x.shape();
    if (out_h < 1 || out_w < 1) throw DimensionError("nearest_resize: empty target extent");
    auto src_index = [](std::size_t d, std::size_t in, std::size_t out) {
        const auto s = static_cast<std::size_t>(std::floor((static_cast<double>(d) + 0.5) *
                                                           static_cast<double>(in) / static_cast<double>(out)));
        return std::min(s, in - 1);
    };
    Tensor<T> out(Shape{xs.n, xs.c, out_h, out_w});
    for (std::size_t q = 0; q < xs.n * xs.c; ++q) {
        const T* src = x.ptr() + q * xs.plane();
        T* dst = out.ptr() + q * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const std::size_t sy = src_index(y, xs.h, out_h);
            for (std::size_t xo = 0; xo < out_w; ++xo) dst[y * out_w + xo] = src[sy * xs.w + src_index(xo, xs.w, out_w)];
        }
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t k = 0; k < x.numel(); ++k) out[k] = x[k] > T(0) ? x[k] : T(0);
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    // Kept strictly inside (0, 1) so downstream logs and the range contract hold.
    const T lo = std::numeric_limits<T>::min();
    const T hi = std::nextafter(T(1), T(0));
    Tensor<T> out(x.shape());
    for (std::size_t k = 0; k < x.numel(); ++k) {
        const T s = T(1) / (T(1) + std::exp(-x[k]));
        out[k] = std::clamp(s, lo, hi);
    }
    return out;
}

template <typename T>
BatchNormStats<T> batch_stats(const Tensor<T>& x) {
    const Shape& xs = x.shape();
    const std::size_t hw = xs.plane();
    const double count = static_cast<double>(xs.n * hw);
    BatchNormStats<T> st{std::vector<T>(xs.c), std::vector<T>(xs.c)};
    for (std::size_t j = 0; j < xs.c; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < xs.n; ++i) {
            const T* p = x.plane(i, j);
            for (std::size_t k = 0; k < hw; ++k) s += p[k];
        }
        const double mean = s / count;
        double ss = 0;
        for (std::size_t i = 0; i < xs.n; ++i) {
            const T* p = x.plane(i, j);
            for (std::size_t k = 0; k < hw; ++k) {
                const double d = p[k] - mean;
                ss += d * d;
            }
        }
        st.mean[j] = static_cast<T>(mean);
        st.var[j] = static_cast<T>(ss / count);
    }
    return st;
}

template <typename T>
Tensor<T> batchnorm_apply(const Tensor<T>& x, std::span<const T> mean, std::span<const T> var,
                          std::span<const T> gamma, std::span<const T> beta, T eps, BatchNormCache<T>* cache) {
    const Shape& xs = x.shape();
    if (mean.size() != xs.c || var.size() != xs.c || gamma.size() != xs.c || beta.size() != xs.c) {
        throw DimensionError("batchnorm2d: parameter length does not match " + std::to_string(xs.c) +
                             " channels of " + xs.str());
    }
    const std::size_t hw = xs.plane();
    Tensor<T> out(xs);
    if (cache) {
        cache->normalized = Tensor<T>(xs);
        cache->inv_std.resize(xs.c);
    }
    for (std::size_t j = 0; j < xs.c; ++j) {
        const T inv = T(1) / std::sqrt(var[j] + eps);
        if (cache) cache->inv_std[j] = inv;
        for (std::size_t i = 0; i < xs.n; ++i) {
            const T* p = x.plane(i, j);
            T* o = out.plane(i, j);
            T* nrm = cache ? cache->normalized.plane(i, j) : nullptr;
            for (std::size_t k = 0; k < hw; ++k) {
                const T xh = (p[k] - mean[j]) * inv;
                if (nrm) nrm[k] = xh;
                o[k] = gamma[j] * xh + beta[j];
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
    if (parts.size() < 2) throw DimensionError("concat_channels: need at least two tensors");
    const Shape& s0 = parts[0]->shape();
    std::size_t c = 0;
    for (const Tensor<T>* p : parts) {
        const Shape& s = p->shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
            throw DimensionError("concat_channels: " + s.str() + " does not match " + s0.str() + " in n,h,w");
        }
        c += s.c;
    }
    Tensor<T> out(Shape{s0.n, c, s0.h, s0.w});
    const std::size_t hw = s0.plane();
    for (std::size_t i = 0; i < s0.n; ++i) {
        T* dst = out.plane(i, 0);
        for (const Tensor<T>* p : parts) {
            const std::size_t len = p->shape().c * hw;
            std::copy_n(p->plane(i, 0), len, dst);
            dst += len;
        }
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::span<const std::size_t> channels) {
    const Shape& xs = x.shape();
    std::size_t total = 0;
    for (std::size_t c : channels) total += c;
    if (total != xs.c) {
        throw DimensionError("split_channels: parts sum to " + std::to_string(total) + " but tensor has " +
                             std::to_string(xs.c) + " channels");
    }
    std::vector<Tensor<T>> parts;
    std::size_t start = 0;
    const std::size_t hw = xs.plane();
    for (std::size_t c : channels) {
        Tensor<T> part(Shape{xs.n, c, xs.h, xs.w});
        for (std::size_t i = 0; i < xs.n; ++i) std::copy_n(x.plane(i, start), c * hw, part.plane(i, 0));
        parts.push_back(std::move(part));
        start += c;
    }
    return parts;
}

#define DSEG_INSTANTIATE(T)                                                                                        \
    template Tensor<T> conv2d_direct(const Tensor<T>&, const Tensor<T>&, std::span<const T>, const ConvGeometry&); \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::span<const T>, const ConvGeometry&);        \
    template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                                            const ConvGeometry&, bool, bool, bool);                                \
    template Tensor<T> inflate_kernel(const Tensor<T>&, std::size_t);                                              \
    template PoolResult<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                     \
    template void scatter_argmax(const Tensor<T>&, std::span<const std::size_t>, Tensor<T>&);                      \
    template PoolResult<T> global_pool(const Tensor<T>&, PoolMode);                                                \
    template PoolResult<T> channel_reduce(const Tensor<T>&, PoolMode);                                             \
    template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);                                \
    template Tensor<T> bilinear_resize_backward(const Tensor<T>&, const Shape&);                                   \
    template Tensor<T> nearest_resize(const Tensor<T>&, std::size_t, std::size_t);                                 \
    template Tensor<T> relu(const Tensor<T>&);                                                                     \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                                  \
    template BatchNormStats<T> batch_stats(const Tensor<T>&);                                                      \
    template Tensor<T> batchnorm_apply(const Tensor<T>&, std::span<const T>, std::span<const T>,                   \
                                       std::span<const T>, std::span<const T>, T, BatchNormCache<T>*);             \
    template Tensor<T> concat_channels(std::span<const Tensor<T>* const>);                                         \
    template std::vector<Tensor<T>> split_channels(const Tensor<T>&, std::span<const std::size_t>);

DSEG_INSTANTIATE(float)
DSEG_INSTANTIATE(double)
#undef DSEG_INSTANTIATE

}  // namespace kernels
}  // namespace dseg
