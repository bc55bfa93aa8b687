#include "canard/fastbif.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "canard/errors.hpp"
#include "canard/integrator.hpp"
#include "canard/torus.hpp"

namespace canard {

std::vector<EquilibriumPoint> fast_equilibria(const FrozenSlowSystem& fast, double m, double v_lo, double v_hi,
                                              double v_step) {
  if (!(v_step > 0) || !(v_hi > v_lo)) throw ConfigError("invalid voltage scan");
  auto g = [&](double V) { return fast.rhs(fast.steady_state(V), m)[0]; };
  std::vector<EquilibriumPoint> out;
  double va = v_lo, ga = g(va);
  const int n = static_cast<int>(std::ceil((v_hi - v_lo) / v_step));
  for (int i = 1; i <= n; ++i) {
    const double vb = std::min(v_hi, v_lo + i * v_step), gb = g(vb);
    if (ga == 0 || (ga > 0) != (gb > 0)) {
      // Bisection on the reduced equation, then Newton on the full system.
      double a = va, b = vb, fa = ga;
      for (int k = 0; k < 60 && b - a > 1e-12; ++k) {
        const double c = 0.5 * (a + b), fc = g(c);
        if ((fc > 0) == (fa > 0)) {
          a = c;
          fa = fc;
        } else {
          b = c;
        }
      }
      try {
        EquilibriumPoint p = find_equilibrium(fast, fast.steady_state(0.5 * (a + b)), m);
        const bool dup = std::any_of(out.begin(), out.end(), [&](const EquilibriumPoint& q) {
          return fast.scaled_norm(q.x - p.x) < 1e-8;
        });
        if (!dup) out.push_back(std::move(p));
      } catch (const NewtonFailure&) {
      }
    }
    va = vb;
    ga = gb;
  }
  std::sort(out.begin(), out.end(), [](const EquilibriumPoint& a, const EquilibriumPoint& b) { return a.x[0] < b.x[0]; });
  return out;
}

Cycle fast_cycle_from_state(const FrozenSlowSystem& fast, double m, const Vec& full_state, const CycleOptions& o,
                            double settle) {
  const Trajectory tr = integrate(FixedParamOde(fast, m), fast.project(full_state), 0.0, settle, {},
                                  {EventSpec::apex(o.phase_var)});
  if (tr.events.size() < 3 || tr.t1() - tr.events.back().t > 0.5 * settle)
    throw NumericalError("no_cycle", fmt::format("fast subsystem does not spike at {} = {}", fast.param_name(), m));
  return find_cycle(fast, m, seed_from_trajectory(tr), o);
}

FastDiagram fast_bifurcation(const ModelSpec& spec, double J, const FastDiagramOptions& o) {
  if (!(o.m_hi > o.m_lo)) throw ConfigError(fmt::format("empty slow range [{}, {}]", o.m_lo, o.m_hi));
  const FrozenSlowSystem fast(spec, o.slow, J);
  FastDiagram d;
  d.J = J;
  d.slow = o.slow;

  ContinuationOptions eo = o.equilibria;
  eo.p_min = o.m_lo;
  eo.p_max = o.m_hi;
  auto covered = [&](const EquilibriumPoint& p) {
    for (const auto& br : d.equilibria)
      for (const auto* q : {&br.points.front(), &br.points.back()})
        if (std::abs(q->param - p.param) < 1e-9 && fast.scaled_norm(q->x - p.x) < 1e-6) return true;
    return false;
  };
  for (const auto& [m, dir] : {std::pair{o.m_hi, -1}, std::pair{o.m_lo, +1}}) {
    for (const auto& p : fast_equilibria(fast, m, o.v_lo, o.v_hi, o.v_step)) {
      if (covered(p)) continue;
      eo.direction = dir;
      d.equilibria.push_back(continue_branch(fast, p, eo));
    }
  }

  // Spiking states from the full model seed the cycle branch.
  const std::size_t m_index = *spec.index_of(o.slow);
  const ModelSystem full(spec, J);
  const Trajectory warm = integrate(full, spec.steady_state(-60.0), 0.0, o.warmup);
  const Trajectory probe = integrate(full, warm.final_state(), 0.0, 200.0, {}, {EventSpec::apex(0)});
  if (probe.events.empty()) {
    d.note = "no spiking in the full model; cycle branch not computed";
    return d;
  }
  std::vector<Vec> seeds;
  for (const auto& e : probe.events) seeds.push_back(e.y);
  std::vector<double> ms;
  for (const auto& s : seeds) ms.push_back(s[static_cast<Eigen::Index>(m_index)]);
  std::vector<double> sorted = ms;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double med = sorted[sorted.size() / 2];
  std::vector<std::size_t> order(seeds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return std::abs(ms[a] - med) < std::abs(ms[b] - med); });

  std::optional<Cycle> start;
  for (std::size_t k = 0; k < std::min<std::size_t>(order.size(), 6) && !start; ++k) {
    const double m = std::clamp(ms[order[k]], o.m_lo, o.m_hi);
    try {
      start = fast_cycle_from_state(fast, m, seeds[order[k]], o.cycle);
    } catch (const NumericalError&) {
    }
  }
  if (!start) {
    d.note = "no fast-subsystem cycle found from the full-model spiking states";
    return d;
  }
  CycleContinuationOptions co = o.cycles;
  co.p_min = o.m_lo;
  co.p_max = o.m_hi;
  co.direction = -1;
  const CycleBranch down = continue_cycles(fast, *start, co, o.cycle);
  co.direction = +1;
  const CycleBranch up = continue_cycles(fast, *start, co, o.cycle);
  d.cycles = join_branches(down, up);
  return d;
}

}  // namespace canard
