#pragma once

#include "mcbm/optim.hpp"
#include "mcbm/tensor.hpp"

#include <functional>
#include <span>

namespace mcbm::diff {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
// turning round-off into huge ratios.
double relative_error(double analytic, double numeric, double floor = 1e-3);

// Central differences over every coordinate of `point` compared against the
// reverse-mode gradient of the scalar function f.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Shape shape,
                           std::span<const double> point, double eps = 1e-5);

// Same check over every scalar of every parameter. loss_fn must be a pure
// function of the parameter values (fix any noise it draws).
GradCheckResult grad_check_parameters(const std::function<Tensor()>& loss_fn,
                                      std::vector<Parameter>& params, double eps = 1e-5);

}  // namespace mcbm::diff
