#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "canard/equilibria.hpp"
#include "canard/integrator.hpp"
#include "canard/param_system.hpp"

namespace canard {

struct CycleOptions {
  int segments = 4;
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  /// Newton tolerance on the scaled shooting residual.
  double tol = 1e-9;
  int max_iter = 30;
  /// Variable whose apex fixes the phase.
  std::size_t phase_var = 0;
  double min_period = 0.05;
};

/// Periodic orbit anchored at an apex of the phase variable.
struct Cycle {
  double param = 0.0;
  Vec anchor;
  double period = 0.0;
  /// Sorted by decreasing modulus.
  ComplexVec multipliers;
  /// Index of the multiplier closest to +1.
  std::size_t trivial = 0;
  Stability stability = Stability::saddle;
  double v_min = 0.0;
  double v_max = 0.0;
  /// Scaled sup norm of Phi(T; anchor) - anchor.
  double residual = 0.0;
  /// Segment start states; the first is the anchor.
  std::vector<Vec> segments;

  ComplexVec nontrivial() const;
  double amplitude() const { return v_max - v_min; }
};

struct CycleSeed {
  Vec state;
  double period = 0.0;
};

/// Seed from the last two apexes of `var` in a trajectory.
CycleSeed seed_from_trajectory(const Trajectory& traj, std::size_t apex_event = 0);

/// Attracting if every nontrivial multiplier lies inside the unit circle by
/// the margin, repelling if every one lies outside, saddle otherwise.
Stability classify_multipliers(const ComplexVec& nontrivial, double margin = kStabilityMargin);

/// Multiple shooting Newton for a periodic orbit at parameter p.
Cycle find_cycle(const ParamSystem& sys, double p, const CycleSeed& seed, const CycleOptions& options = {});

struct CycleBifurcation {
  /// "fold_lc", "torus" or "hopf_terminus".
  std::string kind;
  double param = 0.0;
  Cycle cycle;
  /// Multiplier that crosses the unit circle (fold_lc, torus).
  Complex crossing{1.0, 0.0};
  std::size_t segment = 0;
  bool suspected = false;
};

struct CycleContinuationOptions {
  double p_min = -1.0;
  double p_max = 1.0;
  double param_scale = 0.0;
  double ds = 0.01;
  double ds_min = 1e-5;
  double ds_max = 0.05;
  int direction = -1;
  std::size_t max_points = 2000;
  int corrector_iter = 8;
  int max_halvings = 3;
  /// V-extent below which the branch is declared to end at a Hopf point.
  double min_amplitude = 1e-2;
  /// Period, relative to the start cycle, above which the branch is declared
  /// to approach a homoclinic orbit.
  double max_period_factor = 4.0;
  bool detect = true;
};

struct CycleBranch {
  std::string param_name;
  std::vector<Cycle> cycles;
  /// Multipliers of each cycle reordered to follow the previous cycle.
  std::vector<ComplexVec> tracked;
  /// Pairing between neighbours was a near tie.
  std::vector<bool> ambiguous;
  std::vector<Vec> tangents;
  std::vector<CycleBifurcation> bifurcations;
  double param_scale = 1.0;
  double period_scale = 1.0;
  /// "range", "hopf_terminus", "period_cap", "max_points" or "truncated".
  std::string end_reason;
  std::string diagnostic;
};

CycleBranch continue_cycles(const ParamSystem& sys, const Cycle& start, const CycleContinuationOptions& options,
                            const CycleOptions& cycle_options = {});

std::vector<CycleBifurcation> detect_cycle_bifurcations(const ParamSystem& sys, const CycleBranch& branch,
                                                        const CycleOptions& cycle_options = {});

/// Permutation of `next` minimising total distance to `prev`; `tie` reports
/// a second-best pairing within rounding of the best.
std::vector<std::size_t> match_multipliers(const ComplexVec& prev, const ComplexVec& next, bool* tie = nullptr);

/// Integrates the cycle once from its anchor with dense output.
Trajectory cycle_orbit(const ParamSystem& sys, const Cycle& cycle, const CycleOptions& options = {});

}  // namespace canard
