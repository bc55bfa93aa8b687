#pragma once

#include <random>

#include "canard/model.hpp"
#include "canard/model_io.hpp"

namespace canard::testing {

inline const ModelSpec& purkinje() {
  static const ModelSpec spec = load_model(bundled_model_path());
  return spec;
}

/// Random state with V in [-120, 60] and gates in [0, 1].
inline Vec random_state(const ModelSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> volt(-120.0, 60.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec y(static_cast<Eigen::Index>(spec.dim()));
  y[0] = volt(rng);
  for (Eigen::Index i = 1; i < y.size(); ++i) y[i] = unit(rng);
  return y;
}

/// Central-difference Jacobian with relative step.
template <typename F>
Mat fd_jacobian(F&& f, const Vec& x, double rel_step = 1e-6) {
  const Vec f0 = f(x);
  Mat jac(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    jac.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return jac;
}

}  // namespace canard::testing
