#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pamdn/model.hpp"

namespace pamdn {

struct GradcheckEntry {
    std::string name;  // "op/argument", unique within a suite
    double max_rel_error = 0.0;
};

struct GradcheckSuiteOptions {
    Scale scale{1, 8};
    std::size_t size = 16;  // spatial size of the full-network inputs
    std::uint64_t seed = 0;
    std::vector<double> steps = {1e-3, 1e-4, 1e-5, 1e-6, 1e-7};  // see grad_check_refined
    // Name of one entry whose backward pass is deliberately scaled by 1.5,
    // to confirm the harness notices. Empty for a normal run.
    std::string corrupt;
};

// Finite-difference check of every differentiable layer type, the two
// composite blocks, and both full networks. Throws ConfigError for a size
// the generator cannot take or an unknown `corrupt` name.
std::vector<GradcheckEntry> gradcheck_suite(const GradcheckSuiteOptions& opts);

std::vector<std::string> gradcheck_suite_names();

}  // namespace pamdn
