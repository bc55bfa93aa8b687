#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "canard/errors.hpp"
#include "canard/param_system.hpp"
#include "canard/types.hpp"

namespace canard {

enum class Stability { attracting, repelling, saddle };

std::string to_string(Stability s);

struct EquilibriumPoint {
  double param = 0.0;
  Vec x;
  /// Sorted by decreasing real part, then decreasing imaginary part.
  ComplexVec eigenvalues;
  Stability stability = Stability::saddle;
  /// Scaled sup norm of the right-hand side.
  double residual = 0.0;
};

/// Newton failed; carries the last iterate.
class NewtonFailure : public NumericalError {
 public:
  NewtonFailure(const std::string& kind, const std::string& message, Vec last, double residual)
      : NumericalError(kind, message), last_(std::move(last)), residual_(residual) {}
  const Vec& last_iterate() const noexcept { return last_; }
  double residual() const noexcept { return residual_; }

 private:
  Vec last_;
  double residual_;
};

struct NewtonOptions {
  double tol = 1e-10;
  int max_iter = 50;
};

inline constexpr double kStabilityMargin = 1e-8;

/// Eigenvalues sorted by decreasing real part, ties by decreasing imaginary part.
ComplexVec sorted_eigenvalues(const Mat& a);
Stability classify(const ComplexVec& eigenvalues, double margin = kStabilityMargin);

/// Damped Newton at fixed parameter. Throws NewtonFailure with kind
/// "no_convergence" or "near_fold" (singular Jacobian).
EquilibriumPoint find_equilibrium(const ParamSystem& sys, const Vec& guess, double p,
                                  const NewtonOptions& options = {});

struct BranchBifurcation {
  /// "fold" or "hopf".
  std::string kind;
  double param = 0.0;
  Vec x;
  ComplexVec eigenvalues;
  /// Index of the branch segment [index, index+1] holding the zero.
  std::size_t segment = 0;
  /// Refinement did not confirm the candidate.
  bool suspected = false;
};

struct EquilibriumBranch {
  std::string param_name;
  std::vector<EquilibriumPoint> points;
  /// Unit tangent in normalized coordinates (state / scale, parameter / param_scale).
  std::vector<Vec> tangents;
  std::vector<BranchBifurcation> bifurcations;
  double param_scale = 1.0;
  /// "range", "loop", "max_points" or "truncated".
  std::string end_reason;
  std::string diagnostic;
};

struct ContinuationOptions {
  double p_min = -1.0;
  double p_max = 1.0;
  /// Parameter scale; zero means the width of [p_min, p_max].
  double param_scale = 0.0;
  /// Arclength steps, in units of the parameter scale.
  double ds = 0.01;
  double ds_min = 1e-5;
  double ds_max = 0.05;
  /// -1 starts toward decreasing parameter.
  int direction = -1;
  std::size_t max_points = 20000;
  int corrector_iter = 8;
  int max_halvings = 3;
  bool detect = true;
};

/// Pseudo-arclength continuation of equilibria from a converged start.
EquilibriumBranch continue_branch(const ParamSystem& sys, const EquilibriumPoint& start,
                                  const ContinuationOptions& options);

/// Locates folds and Hopf points along a branch and refines them by
/// bisection in arclength.
std::vector<BranchBifurcation> detect_bifurcations(const ParamSystem& sys, const EquilibriumBranch& branch);

/// All branch points at parameter value p, each polished by Newton.
std::vector<EquilibriumPoint> equilibria_at(const ParamSystem& sys, const EquilibriumBranch& branch, double p);

}  // namespace canard
