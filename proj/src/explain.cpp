#include "dsegnet/explain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "dsegnet/data.hpp"
#include "dsegnet/error.hpp"
#include "dsegnet/netpbm.hpp"

namespace dseg {

namespace {

std::uint8_t round_half_up(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

}  // namespace

Tensor<float> heatmap_from_activation(const Tensor<float>& act, std::size_t h, std::size_t w) {
    const Shape s = act.shape();
    if (s.n != 1) throw DimensionError("heatmap: expected a single image, got batch " + std::to_string(s.n));
    Tensor<float> mean(Shape{1, 1, s.h, s.w});
    const std::size_t plane = s.h * s.w;
    for (std::size_t k = 0; k < plane; ++k) {
        double acc = 0;
        for (std::size_t c = 0; c < s.c; ++c) acc += std::fabs(static_cast<double>(act[c * plane + k]));
        mean[k] = static_cast<float>(acc / static_cast<double>(s.c));
    }
    Tensor<float> up = resize(mean, h, w, ResizeMode::Bilinear);
    const auto [lo, hi] = std::minmax_element(up.data().begin(), up.data().end());
    const float mn = *lo, range = *hi - *lo;
    if (!(range > 0)) {
        up.fill(0.0f);
        return up;
    }
    for (auto& v : up.data()) v = (v - mn) / range;
    return up;
}

Tensor<float> bottleneck_heatmap(DilatedSegNet<float>& model, const Tensor<float>& image) {
    const Shape s = image.shape();
    if (s.n != 1) throw DimensionError("heatmap: expected a single image, got batch " + std::to_string(s.n));
    model.predict(image);
    return heatmap_from_activation(model.last_bottleneck(), s.h, s.w);
}

std::array<std::uint8_t, 3> colormap_rgb(double v) {
    v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    double r, g, b;
    if (v <= 0.5) {
        const double t = v / 0.5;
        r = 255 * t;
        g = 255 * t;
        b = 255 * (1 - t);
    } else {
        const double t = (v - 0.5) / 0.5;
        r = 255;
        g = 255 * (1 - t);
        b = 0;
    }
    return {round_half_up(r), round_half_up(g), round_half_up(b)};
}

Tensor<float> colormap(const Tensor<float>& heat) {
    const Shape s = heat.shape();
    if (s.n != 1 || s.c != 1) throw DimensionError("colormap: expected (1,1,h,w)");
    const std::size_t plane = s.h * s.w;
    Tensor<float> out(Shape{1, 3, s.h, s.w});
    for (std::size_t k = 0; k < plane; ++k) {
        const auto rgb = colormap_rgb(heat[k]);
        for (std::size_t c = 0; c < 3; ++c) out[c * plane + k] = static_cast<float>(rgb[c]) / 255.0f;
    }
    return out;
}

Tensor<float> overlay(const Tensor<float>& image, const Tensor<float>& heat_rgb, double alpha) {
    if (!(image.shape() == heat_rgb.shape()) || image.shape().c != 3)
        throw DimensionError("overlay: image and heat must both be (n,3,h,w) of equal extent");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("overlay: alpha must lie in [0,1]");
    Tensor<float> out(image.shape());
    for (std::size_t k = 0; k < out.numel(); ++k) {
        const double a = to_byte(image[k]), b = to_byte(heat_rgb[k]);
        out[k] = static_cast<float>(round_half_up((1 - alpha) * a + alpha * b)) / 255.0f;
    }
    return out;
}

HeatmapFiles write_heatmap(DilatedSegNet<float>& model, const Tensor<float>& image, const std::string& id,
                           const std::string& dir, double alpha) {
    const auto heat = colormap(bottleneck_heatmap(model, image));
    std::filesystem::create_directories(dir);
    HeatmapFiles f{(std::filesystem::path(dir) / (id + "_heat.ppm")).string(),
                   (std::filesystem::path(dir) / (id + "_overlay.ppm")).string()};
    write_ppm(heat, f.heat);
    write_ppm(overlay(image, heat, alpha), f.overlay);
    return f;
}

}  // namespace dseg
