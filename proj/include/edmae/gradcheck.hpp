#pragma once

#include <functional>
#include <string>
#include <vector>

#include "edmae/tensor.hpp"

namespace edmae {

// Finite-difference gradient verification. The oracle side never touches the
// autodiff engine: every checked operation has an independent double-precision
// reference forward, central differences run on that reference, and the
// engine's float32 analytic gradients are compared against them. The double
// oracle keeps FD rounding noise orders of magnitude below the 1e-4 gate.

using RefForward = std::function<std::vector<double>(const std::vector<std::vector<double>>&)>;
using EngineForward = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckOutcome {
    double worst_rel_err = 0.0;      // gradients, analytic vs finite differences
    double worst_forward_err = 0.0;  // engine forward vs reference forward
};

// Checks d(sum_k w_k out_k)/d(inputs) for one random projection w drawn from
// `seed`. All inputs must require gradients. For graphs containing ReLU,
// `kink_probe` returns every pre-activation; perturbed elements whose probe
// changes sign between the +eps and -eps evaluations are skipped, because
// central differences straddling a kink measure a subgradient mixture the
// analytic pass never claims to produce.
GradCheckOutcome check_gradients(const std::vector<Tensor>& inputs, const EngineForward& engine,
                                 const RefForward& reference, std::uint64_t seed,
                                 double epsilon = 1e-3, const RefForward* kink_probe = nullptr);

struct GradCheckCase {
    std::string name;
    // builds seeded inputs and runs one check
    std::function<GradCheckOutcome(std::uint64_t seed)> run;
};

struct GradCheckReport {
    std::string name;
    double worst_rel_err = 0.0;
    double worst_forward_err = 0.0;
    bool pass = false;
};

// One case per differentiable operator plus the composite chains.
std::vector<GradCheckCase> standard_gradcheck_suite();

std::vector<GradCheckReport> run_gradcheck(const std::vector<GradCheckCase>& cases, int seeds_per_op,
                                           double tolerance);

}  // namespace edmae
