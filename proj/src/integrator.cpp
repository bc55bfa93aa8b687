#include "canard/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "canard/errors.hpp"

namespace canard {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                 a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                 a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                 a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
// Continuous extension (Hairer's contd5).
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

constexpr int kCoeffs = 5;

void interpolate(const Vec* rc, double theta, Vec& out) {
  const double theta1 = 1.0 - theta;
  out = rc[0] + theta * (rc[1] + theta1 * (rc[2] + theta * (rc[3] + theta1 * rc[4])));
}

double interpolate_component(const Vec* rc, double theta, Eigen::Index k) {
  const double theta1 = 1.0 - theta;
  return rc[0][k] + theta * (rc[1][k] + theta1 * (rc[2][k] + theta * (rc[3][k] + theta1 * rc[4][k])));
}

/// Brent's method on [a, b] with f(a), f(b) of opposite sign (or zero).
template <typename F>
double brent(F&& f, double a, double b, double fa, double fb, double xtol) {
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  double c = a, fc = fa, d = b - a, e = d;
  for (int iter = 0; iter < 200; ++iter) {
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a;
      fc = fa;
      d = e = b - a;
    }
    if (std::abs(fc) < std::abs(fb)) {
      a = b; b = c; c = a;
      fa = fb; fb = fc; fc = fa;
    }
    const double tol = 2.0 * 1e-16 * std::abs(b) + 0.5 * xtol;
    const double m = 0.5 * (c - b);
    if (std::abs(m) <= tol || fb == 0.0) return b;
    if (std::abs(e) >= tol && std::abs(fa) > std::abs(fb)) {
      double p, q, r;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * m * s;
        q = 1.0 - s;
      } else {
        q = fa / fc;
        r = fb / fc;
        p = s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0));
        q = (q - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      else p = -p;
      if (2.0 * p < std::min(3.0 * m * q - std::abs(tol * q), std::abs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = m;
        e = d;
      }
    } else {
      d = m;
      e = d;
    }
    a = b;
    fa = fb;
    b += std::abs(d) > tol ? d : (m > 0.0 ? tol : -tol);
    fb = f(b);
  }
  return b;
}

double weighted_rms(const Vec& v, const Vec& y0, const Vec& y1, double rtol, double atol) {
  const Eigen::Index n = v.size();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sk = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = v[i] / sk;
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(n));
}

struct PendingEvent {
  std::size_t spec;
  double t;
};

Trajectory run(const OdeSystem& system, const Vec& y_init, double t_start, double t_end,
               const IntegratorOptions& opt, const std::vector<EventSpec>& specs,
               const StopCondition* stop) {
  const auto n = static_cast<Eigen::Index>(system.dim());
  if (y_init.size() != n)
    throw ConfigError(fmt::format("initial state has length {}, system expects {}", y_init.size(), n));
  if (!(t_end > t_start)) throw ConfigError("integration interval must satisfy t1 > t0");
  const double rtol = opt.rel_tol, atol = opt.abs_tol;
  if (!(rtol >= 1e-13 && rtol <= 1e-2) || !(atol >= 1e-13 && atol <= 1e-2))
    throw ConfigError(fmt::format("tolerances must lie in [1e-13, 1e-2] (rel {}, abs {})", rtol, atol));
  for (const auto& s : specs) {
    if (!(s.time_tol > 0.0)) throw ConfigError("event refinement tolerance must be positive");
    if (s.variable >= system.dim()) throw ConfigError("event variable out of range");
  }
  if (stop && stop->event >= specs.size()) throw ConfigError("stop event index out of range");
  const bool keep_states = opt.keep_states;
  const bool keep_dense = opt.keep_dense && keep_states;

  Trajectory traj(system.dim());
  SolverStats& stats = traj.stats;
  auto f = [&](double t, const Vec& y, Vec& dy) {
    system.rhs(t, y, dy);
    ++stats.rhs_evals;
  };

  Vec y = y_init, y1(n), ytmp(n), k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), err(n);
  Vec rc[kCoeffs];
  for (auto& v : rc) v.resize(n);
  Vec probe(n), probe_dy(n);

  double t = t_start;
  traj.push_state(t, y);
  f(t, y, k1);

  auto cap_at = [&](const Vec& state) { return std::min(opt.max_step, system.max_step(state)); };

  // Initial step (Hairer & Wanner's heuristic).
  double h = opt.initial_step;
  if (!(h > 0.0)) {
    double dnf = 0.0, dny = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sk = atol + rtol * std::abs(y[i]);
      dnf += (k1[i] / sk) * (k1[i] / sk);
      dny += (y[i] / sk) * (y[i] / sk);
    }
    dnf = std::sqrt(dnf / n);
    dny = std::sqrt(dny / n);
    h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * dny / dnf;
    h = std::min({h, cap_at(y), t_end - t});
    ytmp = y + h * k1;
    f(t + h, ytmp, k2);
    double der2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sk = atol + rtol * std::abs(y[i]);
      der2 += ((k2[i] - k1[i]) / sk) * ((k2[i] - k1[i]) / sk);
    }
    der2 = std::sqrt(der2 / n) / h;
    const double der12 = std::max(std::abs(der2), dnf);
    const double h1 = der12 <= 1e-15 ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / der12, 0.2);
    h = std::min({100.0 * h, h1, cap_at(y)});
  }

  constexpr double safe = 0.9, facmin = 0.2, facmax = 10.0, beta = 0.04;
  const double expo1 = 0.2 - beta * 0.75;
  double facold = 1e-4;
  bool last_rejected = false;
  std::size_t stop_hits = 0;

  while (t < t_end) {
    h = std::min(h, cap_at(y));
    if (h < opt.min_step)
      throw NumericalError("stiffness", fmt::format("step size {} below {} at t = {} (last state V = {})",
                                                    h, opt.min_step, t, y[0]));
    bool final_step = false;
    if (t + h >= t_end) {
      h = t_end - t;
      final_step = true;
    }

    ytmp = y + h * a21 * k1;
    f(t + c2 * h, ytmp, k2);
    ytmp = y + h * (a31 * k1 + a32 * k2);
    f(t + c3 * h, ytmp, k3);
    ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f(t + c4 * h, ytmp, k4);
    ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(t + c5 * h, ytmp, k5);
    ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(t + h, ytmp, k6);
    y1 = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    f(t + h, y1, k7);

    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double errn = weighted_rms(err, y, y1, rtol, atol);
    if (!std::isfinite(errn)) throw PoisonError("state", fmt::format("non-finite step error at t = {}", t));

    const double fac11 = std::pow(errn, expo1);
    if (errn > 1.0) {
      ++stats.rejected;
      last_rejected = true;
      h /= std::min(1.0 / facmin, fac11 / safe);
      continue;
    }

    // Accepted step.
    ++stats.steps;
    const double h_used = h;
    {
      double fac = fac11 / std::pow(facold, beta);
      fac = std::clamp(fac / safe, 1.0 / facmax, 1.0 / facmin);
      double hnew = h / fac;
      if (last_rejected) hnew = std::min(hnew, h);
      facold = std::max(errn, 1e-4);
      last_rejected = false;
      h = hnew;
    }

    rc[0] = y;
    rc[1] = y1 - y;
    rc[2] = h_used * k1 - rc[1];
    rc[3] = rc[1] - h_used * k7 - rc[2];
    rc[4] = h_used * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);

    // Event detection over [t, t + h_used].
    std::vector<PendingEvent> pending;
    for (std::size_t s = 0; s < specs.size(); ++s) {
      const auto& es = specs[s];
      const auto k = static_cast<Eigen::Index>(es.variable);
      if (es.kind == EventKind::apex) {
        if (!(k1[k] > 0.0 && k7[k] <= 0.0)) continue;
        auto g = [&](double tau) {
          interpolate(rc, (tau - t) / h_used, probe);
          f(tau, probe, probe_dy);
          return probe_dy[k];
        };
        const double te = brent(g, t, t + h_used, k1[k], k7[k], std::min(es.time_tol, 1e-12));
        pending.push_back({s, te});
      } else {
        const double g0 = y[k] - es.level, g1 = y1[k] - es.level;
        const bool up = g0 < 0.0 && g1 >= 0.0;
        const bool down = g0 > 0.0 && g1 <= 0.0;
        if (!((es.direction >= 0 && up) || (es.direction <= 0 && down))) continue;
        auto g = [&](double tau) { return interpolate_component(rc, (tau - t) / h_used, k) - es.level; };
        const double te = brent(g, t, t + h_used, g0, g1, std::min(es.time_tol, 1e-12));
        pending.push_back({s, te});
      }
    }
    std::sort(pending.begin(), pending.end(), [](const auto& a, const auto& b) { return a.t < b.t; });

    bool stopped = false;
    double t_stop = 0.0;
    for (const auto& pe : pending) {
      const auto& es = specs[pe.spec];
      Event ev;
      ev.spec = pe.spec;
      ev.kind = es.kind;
      ev.t = pe.t;
      interpolate(rc, (pe.t - t) / h_used, ev.y);
      if (es.kind == EventKind::apex) {
        if (ev.y[static_cast<Eigen::Index>(es.variable)] < es.arm_threshold) continue;
        f(pe.t, ev.y, probe_dy);
        ev.g = probe_dy[static_cast<Eigen::Index>(es.variable)];
        ev.slope = -1.0;
      } else {
        ev.g = ev.y[static_cast<Eigen::Index>(es.variable)] - es.level;
        ev.slope = y1[static_cast<Eigen::Index>(es.variable)] > y[static_cast<Eigen::Index>(es.variable)] ? 1.0 : -1.0;
      }
      traj.events.push_back(std::move(ev));
      if (stop && pe.spec == stop->event && ++stop_hits >= stop->count) {
        stopped = true;
        t_stop = pe.t;
        break;
      }
    }

    if (stopped) {
      if (keep_dense) traj.push_step(t, h_used, rc);
      // The final grid point is the stop event itself.
      traj.push_state(t_stop, traj.events.back().y);
      traj.complete = true;
      return traj;
    }

    if (keep_dense) traj.push_step(t, h_used, rc);
    t = final_step ? t_end : t + h_used;
    y = y1;
    k1 = k7;
    if (keep_states || t >= t_end) traj.push_state(t, y);
  }

  if (stop) {
    traj.complete = false;
    traj.note = fmt::format("time cap of {} ms reached after {} of {} stop events", t_end - t_start,
                            stop_hits, stop->count);
  }
  return traj;
}

}  // namespace

Vec Trajectory::state(std::size_t i) const {
  Vec y(static_cast<Eigen::Index>(dim_));
  for (std::size_t k = 0; k < dim_; ++k) y[static_cast<Eigen::Index>(k)] = states_[i * dim_ + k];
  return y;
}

void Trajectory::push_state(double t, const Vec& y) {
  times_.push_back(t);
  for (Eigen::Index k = 0; k < y.size(); ++k) states_.push_back(y[k]);
}

void Trajectory::push_step(double t0, double h, const Vec* coeffs) {
  step_t0_.push_back(t0);
  step_h_.push_back(h);
  for (int c = 0; c < kCoeffs; ++c)
    for (Eigen::Index k = 0; k < coeffs[c].size(); ++k) dense_.push_back(coeffs[c][k]);
}

std::size_t Trajectory::locate(double t) const {
  // Index of the step whose interval contains t.
  const auto it = std::upper_bound(step_t0_.begin(), step_t0_.end(), t);
  if (it == step_t0_.begin()) return 0;
  return static_cast<std::size_t>(it - step_t0_.begin()) - 1;
}

Vec Trajectory::at(double t) const {
  if (times_.empty()) throw ConfigError("empty trajectory");
  if (t < times_.front() || t > times_.back())
    throw ConfigError(fmt::format("time {} outside trajectory span [{}, {}]", t, times_.front(), times_.back()));
  const auto grid = std::lower_bound(times_.begin(), times_.end(), t);
  if (grid != times_.end() && *grid == t) return state(static_cast<std::size_t>(grid - times_.begin()));
  if (dense_.empty()) throw ConfigError("trajectory was recorded without dense output");
  const std::size_t s = locate(t);
  const auto n = static_cast<Eigen::Index>(dim_);
  const double* base = dense_.data() + s * kCoeffs * dim_;
  Vec rc[kCoeffs];
  for (int c = 0; c < kCoeffs; ++c) rc[c] = Eigen::Map<const Vec>(base + c * dim_, n);
  Vec out;
  interpolate(rc, (t - step_t0_[s]) / step_h_[s], out);
  return out;
}

Trajectory integrate(const OdeSystem& system, const Vec& y0, double t0, double t1,
                     const IntegratorOptions& options, const std::vector<EventSpec>& events) {
  return run(system, y0, t0, t1, options, events, nullptr);
}

Trajectory integrate_until(const OdeSystem& system, const Vec& y0, double t0,
                           const std::vector<EventSpec>& events, const StopCondition& stop,
                           const IntegratorOptions& options) {
  if (stop.count == 0) throw ConfigError("stop count must be at least 1");
  if (!(stop.time_cap > 0.0)) throw ConfigError("time cap must be positive");
  return run(system, y0, t0, t0 + stop.time_cap, options, events, &stop);
}

}  // namespace canard
