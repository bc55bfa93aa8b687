#pragma once

#include <optional>
#include <string>
#include <vector>

#include "canard/cycles.hpp"
#include "canard/equilibria.hpp"
#include "canard/param_system.hpp"

namespace canard {

struct FastDiagramOptions {
  double m_lo = 0.0;
  double m_hi = 1.0;
  std::string slow = "M";
  /// Full-model run used to find spiking states for the cycle seed (ms).
  double warmup = 2000.0;
  /// Voltage grid for the equilibrium scan.
  double v_lo = -100.0;
  double v_hi = 60.0;
  double v_step = 0.25;
  ContinuationOptions equilibria{};
  CycleContinuationOptions cycles = [] {
    CycleContinuationOptions c;
    c.max_period_factor = 1.8;
    return c;
  }();
  CycleOptions cycle{};
};

/// Bifurcation diagram of the fast subsystem over the slow variable.
struct FastDiagram {
  double J = 0.0;
  std::string slow;
  std::vector<EquilibriumBranch> equilibria;
  std::optional<CycleBranch> cycles;
  std::string note;
};

/// Equilibria of the fast subsystem at a frozen slow value, from sign changes
/// of dV/dt along the gate steady states, polished by Newton. Sorted by V.
std::vector<EquilibriumPoint> fast_equilibria(const FrozenSlowSystem& fast, double m, double v_lo = -100.0,
                                              double v_hi = 60.0, double v_step = 0.25);

/// Periodic orbit of the fast subsystem at slow value m, started from a
/// full-model state; throws when the state does not settle onto a cycle.
Cycle fast_cycle_from_state(const FrozenSlowSystem& fast, double m, const Vec& full_state,
                            const CycleOptions& options = {}, double settle = 200.0);

FastDiagram fast_bifurcation(const ModelSpec& spec, double J, const FastDiagramOptions& options = {});

}  // namespace canard
