#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsegnet/gradcheck.hpp"

namespace dseg {

struct SuiteResult {
    std::string name;
    std::size_t instances = 0;
    std::size_t passed = 0;
    double tol = 0;
    double worst_rel = 0;
    std::string worst;  // failing or worst instance: "seed S: <leaf detail>"
    bool pass() const { return instances > 0 && passed == instances; }
};

struct SuiteOptions {
    std::size_t seeds = 10;
    double tol = 1e-4;
    bool full_network = false;  // adds the desk network at 1e-3 on a coordinate subset
    double network_tol = 1e-3;
    std::size_t network_coords = 64;
};

// Central finite-difference checks in 64-bit mode for every differentiable op,
// every layer type and both losses, each over `seeds` seeded instances.
std::vector<SuiteResult> run_grad_suites(const SuiteOptions& options = {},
                                         const std::function<void(const SuiteResult&)>& on_suite = {});

}  // namespace dseg
