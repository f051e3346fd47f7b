#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "dsegnet/model.hpp"

namespace dseg {

// Channel-mean |activation| of the bottleneck for a single image, bilinearly
// resized to the input extent and min-max normalized to [0,1]. A constant
// activation yields all zeros. Returns (1,1,h,w).
Tensor<float> bottleneck_heatmap(DilatedSegNet<float>& model, const Tensor<float>& image);

// Same reduction applied to an already computed (1,c,h',w') activation.
Tensor<float> heatmap_from_activation(const Tensor<float>& act, std::size_t h, std::size_t w);

// Three-stop map: 0 blue (0,0,255), 0.5 yellow (255,255,0), 1 red (255,0,0).
// Channels are rounded half-up to bytes; inputs are clamped to [0,1].
std::array<std::uint8_t, 3> colormap_rgb(double v);

// (1,1,h,w) heatmap to a (1,3,h,w) image holding byte/255 values.
Tensor<float> colormap(const Tensor<float>& heat);

// (1-alpha)*image + alpha*heat per channel in byte space, rounded half-up.
Tensor<float> overlay(const Tensor<float>& image, const Tensor<float>& heat_rgb, double alpha = 0.4);

struct HeatmapFiles {
    std::string heat, overlay;
};

// Writes <dir>/<id>_heat.ppm and <dir>/<id>_overlay.ppm for one image.
HeatmapFiles write_heatmap(DilatedSegNet<float>& model, const Tensor<float>& image, const std::string& id,
                           const std::string& dir, double alpha = 0.4);

}  // namespace dseg
