#include "dsegnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dsegnet/error.hpp"
#include "dsegnet/rng.hpp"

namespace dseg {

GradCheckReport grad_check_leaves(const std::function<Var<double>()>& f, std::span<const Var<double>> leaves,
                                  const GradCheckOptions& options) {
    GradCheckReport report;
    for (const auto& leaf : leaves) leaf->zero_grad();
    Var<double> loss = f();
    if (!(loss->value.shape() == Shape{1, 1, 1, 1})) {
        throw DimensionError("grad_check: builder must return a scalar, got " + loss->value.shape().str());
    }
    backward(loss);
    std::vector<Tensor<double>> analytic;
    for (const auto& leaf : leaves) {
        analytic.push_back(leaf->has_grad() ? leaf->grad : Tensor<double>(leaf->value.shape()));
    }
    loss.reset();

    // (leaf, coordinate) pairs to probe.
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t l = 0; l < leaves.size(); ++l)
        for (std::size_t k = 0; k < leaves[l]->value.numel(); ++k) coords.emplace_back(l, k);
    if (coords.size() > options.max_coords) {
        Rng rng(options.seed);
        for (std::size_t i = 0; i < options.max_coords; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(coords.size() - i));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(options.max_coords);
    }

    auto eval = [&]() {
        NoGradGuard guard;
        return f()->value[0];
    };

    for (const auto& [l, k] : coords) {
        double& xv = leaves[l]->value[k];
        const double orig = xv;
        const double h = options.step_scale * std::max(1.0, std::abs(orig));
        xv = orig + h;
        const double fp = eval();
        xv = orig - h;
        const double fm = eval();
        xv = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[l][k];
        ++report.checked;
        if (!std::isfinite(numeric) || !std::isfinite(a)) {
            report.finite = false;
            report.worst = std::to_string(l) + ":" + std::to_string(k);
            continue;
        }
        const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
        const double rel = std::abs(a - numeric) / denom;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst = std::to_string(l) + ":" + std::to_string(k) + " analytic " + std::to_string(a) +
                           " numeric " + std::to_string(numeric);
        }
    }
    report.pass = report.finite && report.max_rel_err <= options.tol;
    return report;
}

GradCheckReport grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                           const GradCheckOptions& options) {
    Var<double> leaf = make_leaf(x, true);
    const Var<double> leaves[] = {leaf};
    return grad_check_leaves([&] { return f(leaf); }, leaves, options);
}

}  // namespace dseg
