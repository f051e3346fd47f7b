#pragma once

#include <cstdint>

#include "dsegnet/tensor.hpp"

namespace dseg {

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::uint64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

// Prediction is positive where prob >= threshold; gt is positive where >= 0.5.
template <typename T>
ConfusionCounts confusion(const Tensor<T>& pred_prob, const Tensor<T>& gt, double threshold = 0.5);

// Counts for image i of a batch.
template <typename T>
ConfusionCounts confusion_at(const Tensor<T>& pred_prob, const Tensor<T>& gt, std::size_t i, double threshold = 0.5);

struct Metrics {
    double dsc = 0, iou = 0, recall = 0, precision = 0, f2 = 0;
};

// Every ratio is eps-smoothed; F2 uses 5PR / max(4P + R, eps).
Metrics metrics_from_counts(const ConfusionCounts& c, double eps = 1e-7);

enum class MiouMode {
    ForegroundPerImage,  // foreground IoU of each image
    MeanOfClasses,       // mean of foreground and background IoU of each image
};

double miou(const ConfusionCounts& c, MiouMode mode, double eps = 1e-7);

}  // namespace dseg
