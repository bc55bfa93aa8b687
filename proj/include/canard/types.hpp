#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

namespace canard {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Complex = std::complex<double>;
using ComplexVec = std::vector<Complex>;

/// Sup norm of a dense vector.
inline double sup_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace canard
