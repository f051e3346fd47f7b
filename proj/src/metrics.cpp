#include "dsegnet/metrics.hpp"

#include <algorithm>

#include "dsegnet/error.hpp"

namespace dseg {
namespace {

template <typename T>
ConfusionCounts count_range(const T* p, const T* g, std::size_t n, double threshold) {
    ConfusionCounts c;
    for (std::size_t k = 0; k < n; ++k) {
        const bool pp = static_cast<double>(p[k]) >= threshold;
        const bool gg = static_cast<double>(g[k]) >= 0.5;
        if (pp && gg) ++c.tp;
        else if (pp) ++c.fp;
        else if (gg) ++c.fn;
        else ++c.tn;
    }
    return c;
}

}  // namespace

template <typename T>
ConfusionCounts confusion(const Tensor<T>& pred_prob, const Tensor<T>& gt, double threshold) {
    if (!(pred_prob.shape() == gt.shape())) {
        throw DimensionError("confusion: prediction " + pred_prob.shape().str() + " vs ground truth " +
                             gt.shape().str());
    }
    return count_range(pred_prob.ptr(), gt.ptr(), gt.numel(), threshold);
}

template <typename T>
ConfusionCounts confusion_at(const Tensor<T>& pred_prob, const Tensor<T>& gt, std::size_t i, double threshold) {
    if (!(pred_prob.shape() == gt.shape()) || i >= gt.shape().n) {
        throw DimensionError("confusion: prediction " + pred_prob.shape().str() + " vs ground truth " +
                             gt.shape().str() + " at image " + std::to_string(i));
    }
    const std::size_t per = gt.numel() / gt.shape().n;
    return count_range(pred_prob.ptr() + i * per, gt.ptr() + i * per, per, threshold);
}

Metrics metrics_from_counts(const ConfusionCounts& c, double eps) {
    const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
    Metrics m;
    m.dsc = (2 * tp + eps) / (2 * tp + fp + fn + eps);
    m.iou = (tp + eps) / (tp + fp + fn + eps);
    m.recall = (tp + eps) / (tp + fn + eps);
    m.precision = (tp + eps) / (tp + fp + eps);
    m.f2 = 5 * m.precision * m.recall / std::max(4 * m.precision + m.recall, eps);
    return m;
}

double miou(const ConfusionCounts& c, MiouMode mode, double eps) {
    const double fg = metrics_from_counts(c, eps).iou;
    if (mode == MiouMode::ForegroundPerImage) return fg;
    const ConfusionCounts inv{c.tn, c.fn, c.fp, c.tp};
    return 0.5 * (fg + metrics_from_counts(inv, eps).iou);
}

template ConfusionCounts confusion(const Tensor<float>&, const Tensor<float>&, double);
template ConfusionCounts confusion(const Tensor<double>&, const Tensor<double>&, double);
template ConfusionCounts confusion_at(const Tensor<float>&, const Tensor<float>&, std::size_t, double);
template ConfusionCounts confusion_at(const Tensor<double>&, const Tensor<double>&, std::size_t, double);

}  // namespace dseg
