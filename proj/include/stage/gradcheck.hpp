#pragma once

#include <functional>
#include <vector>

namespace stage {

/// Central finite differences of a scalar function, one coordinate at a time:
/// (f(theta + step*e_i) - f(theta - step*e_i)) / (2*step). A non-finite
/// function value is propagated as an error.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> theta, double step);

/// |a - b| / max(|a|, |b|, floor). The floor turns comparisons between tiny
/// gradients into absolute ones, below finite-difference noise.
double relative_error(double a, double b, double floor = 1e-4);

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                          double floor = 1e-4);

}  // namespace stage
