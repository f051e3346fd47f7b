#pragma once

// Differentiable operations over Var<T>. Each op computes its forward value
// with dseg::kernels and records a backward rule on the result node.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dsegnet/autograd.hpp"
#include "dsegnet/kernels.hpp"

namespace dseg {

// Running statistics owned by a batch-norm layer.
template <typename T>
struct RunningStats {
    std::vector<T> mean;
    std::vector<T> var;
    bool initialized = false;
};

enum class Mode { Train, Eval };

struct BatchNormOptions {
    double momentum = 0.1;
    double eps = 1e-5;
};

// Op-level multiply-accumulate tally, filled by every op executed on this
// thread while a ScopedMacTally is alive. Convolutions count
// ho*wo*co*ci*kh*kw; every other op counts one per output element.
struct MacTally {
    std::uint64_t total = 0;
    std::map<std::string, std::uint64_t> by_op;
    void add(const std::string& op, std::uint64_t macs) {
        total += macs;
        by_op[op] += macs;
    }
};

class ScopedMacTally {
public:
    explicit ScopedMacTally(MacTally& tally);
    ~ScopedMacTally();
    ScopedMacTally(const ScopedMacTally&) = delete;
    ScopedMacTally& operator=(const ScopedMacTally&) = delete;

private:
    MacTally* previous_;
};

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ConvGeometry& g);

template <typename T>
Var<T> maxpool2d(const Var<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding = 0);

template <typename T>
Var<T> global_pool(const Var<T>& x, PoolMode mode);

template <typename T>
Var<T> channel_reduce(const Var<T>& x, PoolMode mode);

template <typename T>
Var<T> bilinear_upsample(const Var<T>& x, std::size_t scale);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

// Train mode normalizes with batch statistics (biased variance) and updates
// running ← (1-m)·running + m·batch (unbiased variance for the running
// estimate). Eval mode uses the running statistics and throws
// UninitializedStatisticsError if none have been recorded.
template <typename T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, RunningStats<T>& running, Mode mode,
                   const BatchNormOptions& opt = {});

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts);

// b may match a's shape or broadcast as (n,c,1,1) or (n,1,h,w).
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

// Reductions to a (1,1,1,1) scalar.
template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

// Σ x·w for a constant weight tensor of x's shape.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

}  // namespace dseg
