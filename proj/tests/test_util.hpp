#pragma once

#include <functional>

#include "usplat/core/rng.hpp"
#include "usplat/core/types.hpp"

namespace usplat::testutil {

/// Central finite difference of a scalar functional.
inline double fd_central(const std::function<double(double)>& f, double x,
                         double h) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

/// Relative error with an absolute floor, the usual gradcheck metric.
inline double rel_err(double a, double b, double floor = 1e-8) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

}  // namespace usplat::testutil
