#pragma once

#include "obc/fom.hpp"

#include <cmath>

namespace testing_support {

inline obc::VelocityField rotation() {
  return [](double x, double y, double) -> std::array<double, 2> { return {0.5 - y, x - 0.5}; };
}

/// Smooth bump that does not vanish on the interface x = 0.5.
inline obc::ScalarField bump() {
  return [](double x, double y, double) {
    return std::exp(-((x - 0.45) * (x - 0.45) + (y - 0.6) * (y - 0.6)) / 0.02);
  };
}

inline obc::ProblemSpec small_problem(int n, int steps, bool supg, double nu = 1e-2, double dt = 0.02,
                                      double interface_x = 0.5) {
  obc::ProblemSpec p;
  p.decomposition = obc::decompose(obc::build_mesh(n, n), interface_x);
  p.nu = nu;
  p.velocity = rotation();
  p.initial = bump();
  p.dt = dt;
  p.final_time = steps * dt;
  p.supg = supg;
  return p;
}

}  // namespace testing_support
