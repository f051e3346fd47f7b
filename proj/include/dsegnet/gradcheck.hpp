#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "dsegnet/autograd.hpp"

namespace dseg {

struct GradCheckOptions {
    double tol = 1e-4;
    // Above this many coordinates, a seeded random subset of this size is checked.
    std::size_t max_coords = 512;
    std::uint64_t seed = 0;
    // Central-difference step is step_scale * max(1, |x|). Small enough that
    // ReLU and max-pool kinks are rarely straddled in 64-bit mode.
    double step_scale = 1e-6;
    // Relative error is |a - n| / max(|a|, |n|, floor). Without a floor,
    // gradients near 1e-6 are judged on finite-difference round-off alone.
    double floor = 1e-3;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    bool finite = true;
    bool pass = false;
    std::string worst;  // "<leaf>:<coordinate>" of the largest error, with both values
};

// Compares the analytic gradient of a scalar graph builder against central
// finite differences.
GradCheckReport grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                           const GradCheckOptions& options = {});

// Same, over several leaves that the builder closes over. Leaf values are
// perturbed in place and restored afterwards.
GradCheckReport grad_check_leaves(const std::function<Var<double>()>& f, std::span<const Var<double>> leaves,
                                  const GradCheckOptions& options = {});

}  // namespace dseg
