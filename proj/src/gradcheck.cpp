#include "stage/gradcheck.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "stage/errors.hpp"

namespace stage {

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> theta, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  std::vector<double> grad(theta.size(), 0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    double saved = theta[i];
    theta[i] = saved + step;
    double hi = f(theta);
    theta[i] = saved - step;
    double lo = f(theta);
    theta[i] = saved;
    if (!std::isfinite(hi) || !std::isfinite(lo))
      throw std::runtime_error("finite_diff_grad: non-finite value at coordinate " +
                               std::to_string(i));
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

double relative_error(double a, double b, double floor) {
  double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                          double floor) {
  if (a.size() != b.size())
    throw ShapeError("max_relative_error: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

}  // namespace stage
