#pragma once

#include <functional>
#include <vector>

#include "pamdn/autograd.hpp"

namespace pamdn {

// A deterministic scalar-valued function of one tensor, built on `tape`.
using ScalarFn = std::function<Var(Tape& tape, const Var& x)>;

/// Compares reverse-mode gradients of `f` at `x` against central differences
/// with step `h` and returns the largest per-element relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
///
/// `f` must be deterministic; a function that draws fresh randomness per call
/// yields a meaningless result.
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-6);

/// Same error measure, with each element's numeric derivative taken from a
/// ladder of steps instead of a single one. Piecewise-linear networks (ReLU,
/// max pooling) often have a kink within 1e-6 of a random input, and tiny
/// gradient entries drown in round-off at small steps; either way a single
/// central difference measures the stencil, not the gradient. The estimate
/// is chosen from the finite differences alone, never by comparing with the
/// analytic value, so a wrong backward rule still shows.
double grad_check_refined(const ScalarFn& f, const Tensor& x, const std::vector<double>& steps = {1e-3, 1e-4, 1e-5, 1e-6, 1e-7});

}  // namespace pamdn
