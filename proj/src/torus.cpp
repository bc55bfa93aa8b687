#include "canard/torus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "canard/errors.hpp"
#include "canard/param_system.hpp"

namespace canard {

namespace {

std::size_t state_index(const ModelSpec& spec, const std::string& name) {
  const auto i = spec.index_of(name);
  if (!i) throw ConfigError(fmt::format("model has no state variable '{}'", name));
  return *i;
}

PoincareSample make_sample(const ModelSpec& spec, double J, double t, const Vec& y, std::size_t v) {
  const Vec f = spec.eval_rhs(y, J, GateCheck::relaxed);
  const Mat jac = spec.jacobian(y, J, GateCheck::relaxed);
  const auto vi = static_cast<Eigen::Index>(v);
  return {t, y, f[vi], jac.row(vi).dot(f)};
}

EventSpec apex_event(const PoincareOptions& o, std::size_t v) {
  EventSpec e = EventSpec::apex(v, o.arm_threshold);
  e.time_tol = o.time_tol;
  return e;
}

ComplexVec by_modulus(ComplexVec m) {
  std::stable_sort(m.begin(), m.end(), [](Complex a, Complex b) { return std::abs(a) > std::abs(b); });
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------

PoincareSeries poincare_series(const ModelSpec& spec, double J, const Vec& y0, std::size_t n_samples,
                               std::size_t n_transient, const PoincareOptions& o) {
  if (n_samples < 1) throw ConfigError("at least one Poincaré sample is required");
  if (y0.size() != static_cast<Eigen::Index>(spec.dim()))
    throw ConfigError(fmt::format("initial state has length {}, model has {}", y0.size(), spec.dim()));
  PoincareSeries s;
  s.J = J;
  s.v_index = state_index(spec, "V");
  s.m_index = state_index(spec, o.slow);
  s.transient = n_transient;

  IntegratorOptions io = o.integrator;
  io.keep_dense = false;
  io.keep_states = false;
  const std::size_t total = n_samples + n_transient;
  StopCondition stop{0, total, o.cap_per_sample * static_cast<double>(total)};
  const Trajectory traj =
      integrate_until(ModelSystem(spec, J), y0, 0.0, {apex_event(o, s.v_index)}, stop, io);
  std::size_t k = 0;
  for (const Event& e : traj.events) {
    if (e.spec != 0) continue;
    if (k++ < n_transient) continue;
    s.samples.push_back(make_sample(spec, J, e.t, e.y, s.v_index));
  }
  s.complete = s.samples.size() >= n_samples;
  if (!s.complete)
    s.note = fmt::format("{} of {} samples after {} transient apexes within {} ms", s.samples.size(), n_samples,
                         n_transient, stop.time_cap);
  return s;
}

bool satisfies_apex(const PoincareSample& s, double tol) { return std::abs(s.dv) <= tol && s.d2v < 0.0; }

PoincareSample apex_return(const ModelSpec& spec, double J, const Vec& x, const PoincareOptions& o) {
  const std::size_t v = state_index(spec, "V");
  const ModelSystem sys(spec, J);
  IntegratorOptions io = o.integrator;
  io.keep_dense = false;
  io.keep_states = false;
  // Leave the current apex before arming the event.
  constexpr double kClear = 0.25;
  const Trajectory head = integrate(sys, x, 0.0, kClear, io);
  const Trajectory tail = integrate_until(sys, head.final_state(), kClear, {apex_event(o, v)},
                                          {0, 1, o.cap_per_sample}, io);
  if (tail.events.empty())
    throw NumericalError("no_return", fmt::format("no apex within {} ms of the section at J = {}", o.cap_per_sample, J));
  const Event& e = tail.events.front();
  return make_sample(spec, J, e.t, e.y, v);
}

// ---------------------------------------------------------------------------

MapFixedPoint map_fixed_point(const MapFn& map, const Vec& seed, const Vec& scale_in, const MapNewtonOptions& o) {
  const Eigen::Index n = seed.size();
  const Vec scale = scale_in.size() == n ? scale_in : Vec::Ones(n);
  auto norm = [&](const Vec& r) { return sup_norm(r.cwiseQuotient(scale)); };
  auto jacobian = [&](const Vec& x, const Vec& px) {
    Mat jac(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double h = o.fd_step * scale[j];
      Vec xh = x;
      xh[j] += h;
      jac.col(j) = (map(xh) - px) / h;
    }
    return jac;
  };

  Vec x = seed;
  Vec px = map(x);
  double r = norm(px - x);
  for (int it = 0; r > o.tol; ++it) {
    if (it >= o.max_iter || !std::isfinite(r))
      throw NewtonFailure("no_convergence", fmt::format("map Newton did not converge (residual {:.3g})", r), x, r);
    const Mat jac = jacobian(x, px) - Mat::Identity(n, n);
    const Eigen::FullPivLU<Mat> lu(jac);
    if (!lu.isInvertible())
      throw NewtonFailure("singular", "map Jacobian minus identity is singular", x, r);
    const Vec dx = lu.solve(x - px);
    double lambda = 1.0;
    for (int k = 0; k < 12; ++k, lambda *= 0.5) {
      const Vec trial = x + lambda * dx;
      const Vec pt = map(trial);
      const double rt = norm(pt - trial);
      if (rt < r || k == 11) {
        x = trial;
        px = pt;
        r = rt;
        break;
      }
    }
  }
  MapFixedPoint fp;
  fp.J = NAN;
  fp.state = x;
  fp.residual = r;
  const Eigen::EigenSolver<Mat> es(jacobian(x, px), false);
  for (Eigen::Index i = 0; i < n; ++i) fp.multipliers.push_back(es.eigenvalues()[i]);
  fp.multipliers = by_modulus(fp.multipliers);
  fp.stable = std::all_of(fp.multipliers.begin(), fp.multipliers.end(), [](Complex m) { return std::abs(m) < 1.0; });
  return fp;
}

MapFixedPoint map_fixed_point(const ModelSpec& spec, double J, const Vec& seed, const CycleOptions& co) {
  const std::size_t v = state_index(spec, "V");
  if (seed.size() != static_cast<Eigen::Index>(spec.dim()))
    throw ConfigError(fmt::format("seed has length {}, model has {}", seed.size(), spec.dim()));
  PoincareOptions po;
  const Trajectory lead = integrate_until(ModelSystem(spec, J), seed, 0.0, {apex_event(po, v)}, {0, 2, 200.0});
  if (lead.events.size() < 2)
    throw NumericalError("no_return", fmt::format("seed does not spike at J = {}", J));

  CycleOptions o = co;
  o.phase_var = v;
  const Cycle c = find_cycle(DriveSystem(spec), J, seed_from_trajectory(lead), o);
  const PoincareSample at = make_sample(spec, J, 0.0, c.anchor, v);
  if (!(at.d2v < -1e-6))
    throw NumericalError("tangency", fmt::format("flow is tangent to the apex section at J = {} (d2V/dt2 = {:.3g})",
                                                 J, at.d2v));

  MapFixedPoint fp;
  fp.J = J;
  fp.state = c.anchor;
  fp.period = c.period;
  fp.multipliers = by_modulus(c.nontrivial());
  fp.stable = std::all_of(fp.multipliers.begin(), fp.multipliers.end(), [](Complex m) { return std::abs(m) < 1.0; });

  PoincareOptions tight;
  tight.integrator.rel_tol = 1e-12;
  tight.integrator.abs_tol = 1e-13;
  tight.time_tol = 1e-12;
  const PoincareSample back = apex_return(spec, J, c.anchor, tight);
  fp.residual = DriveSystem(spec).scaled_norm(back.state - c.anchor);
  return fp;
}

double complex_pair_modulus(const ComplexVec& multipliers, Complex* which) {
  double best = -1.0;
  for (Complex m : multipliers) {
    if (std::abs(m.imag()) <= 1e-9 * std::max(1.0, std::abs(m))) continue;
    if (std::abs(m) > best) {
      best = std::abs(m);
      if (which) *which = Complex(m.real(), std::abs(m.imag()));
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

TorusLocation locate_torus_bifurcation(const FixedPointFamily& family, double start, double end,
                                       const TorusOptions& o) {
  if (!(std::isfinite(start) && std::isfinite(end)) || start == end) throw ConfigError("bracket must be a finite interval");
  if (!(o.tol > 0) || !(o.grid_step > 0)) throw ConfigError("tolerances must be positive");

  auto modulus = [](const MapFixedPoint& fp, double p) {
    const double m = complex_pair_modulus(fp.multipliers);
    if (m < 0)
      throw NumericalError("krein", fmt::format("no complex multiplier pair at {} (the pair has become real)", p));
    return m;
  };

  TorusLocation loc;
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(end - start) / o.grid_step - 1e-9)));
  std::vector<MapFixedPoint> fps;
  for (int k = 0; k <= steps; ++k) {
    const double p = start + (end - start) * k / steps;
    fps.push_back(family(p, fps.empty() ? nullptr : &fps.back()));
    loc.grid.push_back(p);
    loc.grid_moduli.push_back(modulus(fps.back(), p));
  }

  // Orientation and monotonicity, read in increasing parameter order.
  std::vector<std::size_t> order(loc.grid.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return loc.grid[a] < loc.grid[b]; });
  const double lo_mod = loc.grid_moduli[order.front()], hi_mod = loc.grid_moduli[order.back()];
  loc.modulus_increases = hi_mod > lo_mod;
  loc.monotone = true;
  for (std::size_t i = 1; i < order.size(); ++i) {
    const double d = loc.grid_moduli[order[i]] - loc.grid_moduli[order[i - 1]];
    if ((d > 0) != loc.modulus_increases) loc.monotone = false;
  }

  std::size_t k = 0;
  while (k + 1 < fps.size() && (loc.grid_moduli[k] - 1.0) * (loc.grid_moduli[k + 1] - 1.0) > 0) ++k;
  if (k + 1 >= fps.size())
    throw NumericalError("no_crossing", fmt::format("pair modulus does not cross 1 in [{}, {}] (moduli {:.6f} .. {:.6f})",
                                                    std::min(start, end), std::max(start, end), lo_mod, hi_mod));

  double a = loc.grid[k], b = loc.grid[k + 1];
  double fa = loc.grid_moduli[k] - 1.0, fb = loc.grid_moduli[k + 1] - 1.0;
  MapFixedPoint pa = fps[k], pb = fps[k + 1];
  while (std::abs(b - a) > o.tol) {
    const double mid = 0.5 * (a + b);
    MapFixedPoint pm = family(mid, &pa);
    const double fm = modulus(pm, mid) - 1.0;
    ++loc.iterations;
    if (fm == 0.0) {
      a = b = mid;
      fa = fb = 0.0;
      pa = pb = pm;
      break;
    }
    if ((fm > 0) == (fa > 0)) {
      a = mid;
      fa = fm;
      pa = std::move(pm);
    } else {
      b = mid;
      fb = fm;
      pb = std::move(pm);
    }
  }
  // Final linear interpolation inside the bracket.
  loc.J = (fa == fb) ? 0.5 * (a + b) : a - fa * (b - a) / (fb - fa);
  loc.fixed_point = family(loc.J, std::abs(loc.J - a) <= std::abs(loc.J - b) ? &pa : &pb);
  Complex pair;
  loc.modulus = complex_pair_modulus(loc.fixed_point.multipliers, &pair);
  if (loc.modulus < 0) throw NumericalError("krein", "no complex multiplier pair at the located crossing");
  loc.angle = std::arg(pair);
  loc.rotation_number = loc.angle / (2.0 * std::numbers::pi);
  return loc;
}

TorusLocation locate_torus_bifurcation(const ModelSpec& spec, double a, double b, const TorusOptions& o) {
  const std::size_t v = state_index(spec, "V");
  auto seed_at = [&](double J) -> std::optional<MapFixedPoint> {
    try {
      const ModelSystem sys(spec, J);
      const Trajectory warm = integrate(sys, spec.steady_state(-60.0), 0.0, o.warmup);
      const Trajectory probe = integrate_until(sys, warm.final_state(), 0.0, {EventSpec::apex(v)}, {0, 1, 200.0});
      if (probe.events.empty()) return std::nullopt;
      return map_fixed_point(spec, J, probe.events.back().y, o.cycle);
    } catch (const NumericalError&) {
      return std::nullopt;
    }
  };
  double start = a, end = b;
  auto first = seed_at(a);
  if (!first) {
    first = seed_at(b);
    std::swap(start, end);
  }
  if (!first)
    throw NumericalError("no_seed", fmt::format("no periodic orbit found by simulation at J = {} or J = {}", a, b));
  const MapFixedPoint seed = *first;
  FixedPointFamily family = [&](double J, const MapFixedPoint* near) {
    if (!near && J == seed.J) return seed;
    return map_fixed_point(spec, J, near ? near->state : seed.state, o.cycle);
  };
  return locate_torus_bifurcation(family, start, end, o);
}

MapFn neimark_sacker_map(double mu, double theta) {
  const Complex rot = (1.0 + mu) * std::polar(1.0, theta);
  return [rot](const Vec& x) {
    const Complex z(x[0], x[1]);
    const Complex w = rot * z - z * std::norm(z);
    Vec out(2);
    out << w.real(), w.imag();
    return out;
  };
}

std::vector<Vec> map_orbit(const MapFn& map, const Vec& x0, std::size_t n, std::size_t transient) {
  std::vector<Vec> out;
  out.reserve(n);
  Vec x = x0;
  for (std::size_t k = 0; k < transient; ++k) x = map(x);
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(x);
    x = map(x);
  }
  return out;
}

CriticalityFit fit_sqrt_scaling(const std::vector<double>& d, const std::vector<double>& r, double min_r_squared) {
  if (d.size() != r.size() || d.size() < 3) throw ConfigError("sqrt fit needs at least three (distance, radius) pairs");
  CriticalityFit fit;
  fit.distances = d;
  fit.radii = r;
  double ss = 0, sr = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(d[i] > 0)) throw ConfigError("distances from the bifurcation must be positive");
    ss += d[i];
    sr += r[i] * std::sqrt(d[i]);
  }
  fit.coefficient = sr / ss;
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
  double res = 0, tot = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    res += std::pow(r[i] - fit.coefficient * std::sqrt(d[i]), 2);
    tot += std::pow(r[i] - mean, 2);
  }
  fit.r_squared = tot > 0 ? 1.0 - res / tot : 0.0;
  fit.supercritical = fit.r_squared >= min_r_squared && fit.coefficient > 0;
  return fit;
}

double invariant_curve_radius(const PoincareSeries& s, double vc, double mc, double vs, double ms) {
  if (s.size() == 0) throw ConfigError("empty Poincaré series");
  double sum = 0;
  for (std::size_t k = 0; k < s.size(); ++k) sum += std::hypot((s.v(k) - vc) / vs, (s.m(k) - mc) / ms);
  return sum / static_cast<double>(s.size());
}

CriticalityFit torus_criticality(const ModelSpec& spec, const TorusLocation& loc, const CriticalityOptions& o) {
  std::vector<double> offsets = o.offsets;
  std::sort(offsets.rbegin(), offsets.rend());
  const double side = loc.modulus_increases ? 1.0 : -1.0;
  const std::size_t v = state_index(spec, "V");
  const std::size_t m = state_index(spec, o.poincare.slow);

  std::vector<double> radii;
  Vec near = loc.fixed_point.state;
  Vec y;
  for (double d : offsets) {
    const double J = loc.J + side * d;
    const MapFixedPoint fp = map_fixed_point(spec, J, near);
    near = fp.state;
    if (y.size() == 0) {
      // Kick off the fixed point along V; the curve grows from there.
      y = fp.state;
      y[static_cast<Eigen::Index>(v)] += 1.0;
    }
    double r = NAN;
    for (std::size_t blk = 0; blk < o.max_blocks; ++blk) {
      const PoincareSeries s = poincare_series(spec, J, y, o.block, 0, o.poincare);
      if (!s.complete) throw IncompleteResult(fmt::format("spiking stopped near the torus at J = {}", J));
      const double rn = invariant_curve_radius(s, fp.state[static_cast<Eigen::Index>(v)],
                                               fp.state[static_cast<Eigen::Index>(m)]);
      y = s.samples.back().state;
      const bool settled = std::isfinite(r) && std::abs(rn - r) <= o.settle_tol * rn;
      r = rn;
      if (settled) break;
    }
    radii.push_back(r);
  }
  return fit_sqrt_scaling(offsets, radii);
}

std::string to_string(MapAttractor a) {
  switch (a) {
    case MapAttractor::fixed_point: return "fixed_point";
    case MapAttractor::invariant_circle: return "invariant_circle";
    case MapAttractor::irregular: return "irregular";
  }
  return "unknown";
}

AttractorReport classify_map_attractor(const PoincareSeries& series, const AttractorOptions& o) {
  std::vector<Vec> pts;
  pts.reserve(series.size());
  for (std::size_t k = 0; k < series.size(); ++k) {
    Vec p(2);
    p << series.v(k) / o.v_scale, series.m(k) / o.m_scale;
    pts.push_back(p);
  }
  return classify_map_attractor(pts, o);
}

AttractorReport classify_map_attractor(const std::vector<Vec>& pts, const AttractorOptions& o) {
  const std::size_t n = pts.size();
  if (n < o.min_samples) throw ConfigError(fmt::format("need at least {} samples, got {}", o.min_samples, n));
  AttractorReport rep;
  Vec lo = pts[0], hi = pts[0], mean = Vec::Zero(2);
  for (const Vec& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
    mean += p;
  }
  mean /= static_cast<double>(n);
  // Bounding-box diagonal; within a factor sqrt(2) of the true diameter.
  rep.diameter = (hi - lo).norm();
  if (rep.diameter < o.diameter_tol) {
    rep.kind = MapAttractor::fixed_point;
    return rep;
  }

  Vec sd = Vec::Zero(2);
  for (const Vec& p : pts) sd += (p - mean).cwiseAbs2();
  sd = (sd / static_cast<double>(n)).cwiseSqrt();
  for (Eigen::Index i = 0; i < 2; ++i)
    if (!(sd[i] > 1e-12 * sd.maxCoeff())) sd[i] = 1.0;

  std::vector<double> rho(n), theta(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec u = (pts[k] - mean).cwiseQuotient(sd);
    rho[k] = u.norm();
    theta[k] = std::atan2(u[1], u[0]);
  }

  // Closed polyline: mean radius per angular bin, joined linearly.
  // Orbits near a low-order resonance visit few angles; coarsen until at
  // least half the bins are hit.
  std::size_t bins = std::clamp<std::size_t>(n / 10, 8, 64);
  double width = 0;
  std::vector<double> sum;
  std::vector<std::size_t> cnt;
  auto bin_of = [&](double th) {
    return std::min(bins - 1, static_cast<std::size_t>((th + std::numbers::pi) / width));
  };
  for (;; bins /= 2) {
    width = 2.0 * std::numbers::pi / static_cast<double>(bins);
    sum.assign(bins, 0.0);
    cnt.assign(bins, 0);
    for (std::size_t k = 0; k < n; ++k) {
      sum[bin_of(theta[k])] += rho[k];
      ++cnt[bin_of(theta[k])];
    }
    const auto filled =
        static_cast<std::size_t>(std::count_if(cnt.begin(), cnt.end(), [](std::size_t c) { return c > 0; }));
    if (2 * filled >= bins) break;
    if (bins / 2 < 8) return rep;
  }
  std::vector<double> ring(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    if (cnt[b]) {
      ring[b] = sum[b] / static_cast<double>(cnt[b]);
      continue;
    }
    std::size_t l = b, r = b;
    do l = (l + bins - 1) % bins; while (!cnt[l]);
    do r = (r + 1) % bins; while (!cnt[r]);
    ring[b] = 0.5 * (sum[l] / static_cast<double>(cnt[l]) + sum[r] / static_cast<double>(cnt[r]));
  }
  auto ring_at = [&](double th) {
    const double x = (th + std::numbers::pi) / width - 0.5;
    const double f = std::floor(x);
    const auto i0 = static_cast<std::size_t>((static_cast<long>(f) % static_cast<long>(bins) + static_cast<long>(bins)) %
                                             static_cast<long>(bins));
    const std::size_t i1 = (i0 + 1) % bins;
    return ring[i0] + (x - f) * (ring[i1] - ring[i0]);
  };
  rep.mean_radius = std::accumulate(ring.begin(), ring.end(), 0.0) / static_cast<double>(bins);
  double sq = 0;
  for (std::size_t k = 0; k < n; ++k) sq += std::pow(rho[k] - ring_at(theta[k]), 2);
  rep.spread = rep.mean_radius > 0 ? std::sqrt(sq / static_cast<double>(n)) / rep.mean_radius : INFINITY;

  std::size_t pos = 0, neg = 0;
  for (std::size_t k = 1; k < n; ++k) {
    const double d = std::remainder(theta[k] - theta[k - 1], 2.0 * std::numbers::pi);
    if (d > 0) ++pos;
    if (d < 0) ++neg;
  }
  rep.rotation_consistency = static_cast<double>(std::max(pos, neg)) / static_cast<double>(n - 1);
  if (rep.spread < o.spread_tol && rep.rotation_consistency >= o.rotation_fraction)
    rep.kind = MapAttractor::invariant_circle;
  return rep;
}

// ---------------------------------------------------------------------------

std::vector<SpikeCycle> spike_cycles(const Trajectory& traj, std::size_t v, std::size_t m, double max_isi,
                                     std::size_t apex_event) {
  if (!traj.has_dense()) throw ConfigError("spike cycles need a trajectory with dense output");
  std::vector<double> apex;
  for (const Event& e : traj.events)
    if (e.spec == apex_event) apex.push_back(e.t);
  std::vector<SpikeCycle> out;
  constexpr int kSamples = 64;
  const auto vi = static_cast<Eigen::Index>(v), mi = static_cast<Eigen::Index>(m);
  for (std::size_t i = 1; i < apex.size(); ++i) {
    const double a = apex[i - 1], b = apex[i];
    if (b - a > max_isi) continue;
    SpikeCycle c;
    c.t0 = a;
    c.t1 = b;
    double lo = INFINITY, hi = -INFINITY, integral = 0, prev_m = 0;
    for (int s = 0; s <= kSamples; ++s) {
      const Vec y = traj.at(a + (b - a) * s / kSamples);
      lo = std::min(lo, y[vi]);
      hi = std::max(hi, y[vi]);
      if (s > 0) integral += 0.5 * (y[mi] + prev_m);
      prev_m = y[mi];
    }
    c.extent = hi - lo;
    c.mean_m = integral / kSamples;
    if (!out.empty() && out.back().t1 == a) {
      c.follows = true;
      c.drift = c.mean_m - out.back().mean_m;
    }
    out.push_back(c);
  }
  return out;
}

std::string to_string(CanardExit e) {
  switch (e) {
    case CanardExit::none: return "none";
    case CanardExit::to_attracting_fp: return "to_attracting_fp";
    case CanardExit::to_attracting_lc: return "to_attracting_lc";
  }
  return "unknown";
}

CycleBranch join_branches(const CycleBranch& a, const CycleBranch& b) {
  if (a.cycles.empty() || b.cycles.empty()) throw ConfigError("cannot join empty branches");
  if (a.cycles.front().param != b.cycles.front().param ||
      sup_norm(a.cycles.front().anchor - b.cycles.front().anchor) > 1e-12)
    throw ConfigError("branches to join must start from the same cycle");
  const std::size_t na = a.cycles.size();
  CycleBranch out = b;
  out.cycles.assign(a.cycles.rbegin(), a.cycles.rend());
  out.cycles.insert(out.cycles.end(), b.cycles.begin() + 1, b.cycles.end());
  out.tracked.clear();
  out.ambiguous.clear();
  out.tangents.clear();
  for (auto it = a.tangents.rbegin(); it != a.tangents.rend(); ++it) out.tangents.push_back(-*it);
  if (!b.tangents.empty()) out.tangents.insert(out.tangents.end(), b.tangents.begin() + 1, b.tangents.end());
  // Segment k of a runs between its points k and k + 1, which now sit at
  // na - 2 - k and na - 1 - k.
  out.bifurcations.clear();
  for (auto bif : a.bifurcations) {
    bif.segment = na >= 2 + bif.segment ? na - 2 - bif.segment : 0;
    out.bifurcations.push_back(std::move(bif));
  }
  for (auto bif : b.bifurcations) {
    bif.segment += na - 1;
    out.bifurcations.push_back(std::move(bif));
  }
  out.end_reason = b.end_reason;
  out.diagnostic = a.diagnostic.empty() ? b.diagnostic : a.diagnostic + "; " + b.diagnostic;
  return out;
}

namespace {

struct BranchPoint {
  double m;
  double value;
};

std::vector<BranchPoint> densify(const std::vector<BranchPoint>& raw, const std::vector<bool>& keep) {
  std::vector<BranchPoint> out;
  constexpr int kSub = 8;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!keep[i]) continue;
    out.push_back(raw[i]);
    if (i + 1 < raw.size() && keep[i + 1])
      for (int s = 1; s < kSub; ++s) {
        const double f = static_cast<double>(s) / kSub;
        out.push_back({raw[i].m + f * (raw[i + 1].m - raw[i].m), raw[i].value + f * (raw[i + 1].value - raw[i].value)});
      }
  }
  return out;
}

}  // namespace

CanardMetrics canard_metrics(const Trajectory& traj, const CycleBranch& branch, const EquilibriumBranch& eq,
                             std::size_t v, std::size_t mi, const CanardOptions& o) {
  const auto fold = std::find_if(branch.bifurcations.begin(), branch.bifurcations.end(),
                                 [](const CycleBifurcation& b) { return b.kind == "fold_lc"; });
  if (fold == branch.bifurcations.end()) throw ConfigError("cycle branch has no fold of limit cycles");
  CanardMetrics out;
  out.fold_m = fold->param;
  out.fold_extent = fold->cycle.amplitude();
  const double dm = o.tube_m * std::abs(out.fold_m);

  std::vector<BranchPoint> raw;
  std::vector<bool> att, rep;
  for (const Cycle& c : branch.cycles) {
    raw.push_back({c.param, c.amplitude()});
    att.push_back(c.stability == Stability::attracting);
    rep.push_back(c.stability != Stability::attracting);
  }
  const auto att_pts = densify(raw, att), rep_pts = densify(raw, rep);
  std::vector<BranchPoint> eq_raw;
  std::vector<bool> eq_keep;
  for (const auto& p : eq.points) {
    eq_raw.push_back({p.param, p.x[0]});
    eq_keep.push_back(p.stability == Stability::attracting);
  }
  const auto fp_pts = densify(eq_raw, eq_keep);

  // Tube-normalised distance: <= 1 inside the tube.
  auto tube = [&](const std::vector<BranchPoint>& pts, double ext, double m) {
    double best = INFINITY;
    for (const auto& p : pts)
      best = std::min(best, std::max(std::abs(ext - p.value) / (o.tube_v * p.value), std::abs(m - p.m) / dm));
    return best;
  };
  auto euclid = [&](const std::vector<BranchPoint>& pts, double ext, double m) {
    double best = INFINITY;
    for (const auto& p : pts)
      best = std::min(best, std::hypot((ext - p.value) / out.fold_extent, (m - p.m) / out.fold_m));
    return best;
  };
  auto near_fp = [&](double t0, double t1) -> std::optional<double> {
    if (fp_pts.empty() || !(t1 > t0)) return std::nullopt;
    const int n = std::max(2, static_cast<int>((t1 - t0) / 0.1));
    for (int s = 0; s <= n; ++s) {
      const double t = t0 + (t1 - t0) * s / n;
      const Vec y = traj.at(t);
      const double V = y[static_cast<Eigen::Index>(v)], m = y[static_cast<Eigen::Index>(mi)];
      for (const auto& p : fp_pts)
        if (std::abs(V - p.value) <= o.tube_v * out.fold_extent && std::abs(m - p.m) <= dm) return t;
    }
    return std::nullopt;
  };

  const auto spikes = spike_cycles(traj, v, mi, o.max_isi, o.apex_event);
  if (spikes.empty()) {
    out.note = "no spikes";
    return out;
  }
  std::vector<double> isi;
  for (const auto& s : spikes) isi.push_back(s.t1 - s.t0);
  std::nth_element(isi.begin(), isi.begin() + static_cast<std::ptrdiff_t>(isi.size() / 2), isi.end());
  out.spike_period = isi[isi.size() / 2];
  auto mid = [](const SpikeCycle& s) { return 0.5 * (s.t0 + s.t1); };

  std::vector<double> flips;
  for (std::size_t j = 1; j < spikes.size(); ++j) {
    const auto& p = spikes[j - 1];
    const auto& q = spikes[j];
    if (!p.follows || !q.follows || !(p.drift > 0) || q.drift > 0) continue;
    flips.push_back(mid(p) + (mid(q) - mid(p)) * p.drift / (p.drift - q.drift));
  }

  for (std::size_t i = 1; i < spikes.size(); ++i) {
    const auto& p = spikes[i - 1];
    const auto& q = spikes[i];
    if (!q.follows || !(p.extent < out.fold_extent && q.extent >= out.fold_extent)) continue;
    if (std::abs(q.mean_m - out.fold_m) > dm) continue;
    CanardPassage c;
    c.fold_time = mid(p) + (mid(q) - mid(p)) * (out.fold_extent - p.extent) / (q.extent - p.extent);
    for (double f : flips)
      if (!c.has_flip || std::abs(f - c.fold_time) < std::abs(c.flip_time - c.fold_time)) {
        c.flip_time = f;
        c.has_flip = true;
      }

    std::size_t j = i;
    c.min_distance = INFINITY;
    for (; j < spikes.size(); ++j) {
      const auto& s = spikes[j];
      if (j > i && !s.follows) break;
      if (!(tube(rep_pts, s.extent, s.mean_m) <= 1.0)) break;
      ++c.dwell_spikes;
      c.dwell = s.t1 - c.fold_time;
      c.min_distance = std::min(c.min_distance, euclid(rep_pts, s.extent, s.mean_m));
    }
    if (c.dwell_spikes == 0) c.min_distance = euclid(rep_pts, q.extent, q.mean_m);

    if (c.dwell > 0) {
      const std::size_t stop = std::min(spikes.size(), j + o.exit_horizon);
      double prev_end = spikes[j - 1].t1;
      for (std::size_t k = j; k < stop && c.exit == CanardExit::none; ++k) {
        const auto& s = spikes[k];
        if (!s.follows) {
          if (auto t = near_fp(prev_end, s.t0)) {
            c.exit = CanardExit::to_attracting_fp;
            c.exit_time = *t;
            break;
          }
        }
        const double dr = tube(rep_pts, s.extent, s.mean_m), da = tube(att_pts, s.extent, s.mean_m);
        if (da <= 1.0 && dr > 1.0) {
          c.exit = CanardExit::to_attracting_lc;
          c.exit_time = s.t0;
        }
        prev_end = s.t1;
      }
      if (c.exit == CanardExit::none && stop == spikes.size())
        if (auto t = near_fp(prev_end, traj.t1())) {
          c.exit = CanardExit::to_attracting_fp;
          c.exit_time = *t;
        }
    }
    out.passages.push_back(c);
    i = std::max(i, j);
  }

  out.min_distance = INFINITY;
  for (const auto& c : out.passages) {
    if (c.dwell > out.dwell) {
      out.dwell = c.dwell;
      out.dwell_spikes = c.dwell_spikes;
    }
    out.min_distance = std::min(out.min_distance, c.min_distance);
    if (c.exit == CanardExit::to_attracting_fp) ++out.exits_fp;
    if (c.exit == CanardExit::to_attracting_lc) ++out.exits_lc;
    if (c.has_flip && out.spike_period > 0)
      out.max_flip_offset = std::max(out.max_flip_offset, std::abs(c.flip_time - c.fold_time) / out.spike_period);
  }
  if (out.passages.empty()) {
    out.min_distance = 0.0;
    out.note = "no passage through the fold region";
  }
  return out;
}

}  // namespace canard
