#include "canard/cycles.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "canard/errors.hpp"

namespace canard {

namespace {

// State, transition matrix and (optionally) parameter sensitivity.
class VariationalOde : public OdeSystem {
 public:
  VariationalOde(const ParamSystem& sys, double p, bool with_param)
      : sys_(sys), p_(p), n_(static_cast<Eigen::Index>(sys.dim())), with_param_(with_param) {}

  std::size_t dim() const override { return static_cast<std::size_t>(n_ + n_ * n_ + (with_param_ ? n_ : 0)); }

  void rhs(double, const Vec& u, Vec& du) const override {
    const Vec y = u.head(n_);
    sys_.rhs(y, p_, f_);
    sys_.jacobian(y, p_, a_);
    du.resize(u.size());
    du.head(n_) = f_;
    Eigen::Map<const Mat> phi(u.data() + n_, n_, n_);
    Eigen::Map<Mat>(du.data() + n_, n_, n_) = a_ * phi;
    if (with_param_) {
      sys_.dparam(y, p_, fp_);
      du.tail(n_) = a_ * u.tail(n_) + fp_;
    }
  }

  double max_step(const Vec& u) const override { return sys_.max_step(u.head(n_), p_); }

 private:
  const ParamSystem& sys_;
  double p_;
  Eigen::Index n_;
  bool with_param_;
  mutable Vec f_, fp_;
  mutable Mat a_;
};

IntegratorOptions endpoint_options(const CycleOptions& o) {
  IntegratorOptions io;
  io.rel_tol = o.rel_tol;
  io.abs_tol = o.abs_tol;
  io.keep_dense = false;
  io.keep_states = false;
  return io;
}

struct Segment {
  Vec end;
  Mat phi;
  Vec sens;
};

Segment flow_segment(const ParamSystem& sys, double p, const Vec& x, double dt, const CycleOptions& o, bool jac,
                     bool with_param) {
  const Eigen::Index n = x.size();
  Segment s;
  if (!jac) {
    const FixedParamOde ode(sys, p);
    s.end = integrate(ode, x, 0.0, dt, endpoint_options(o)).final_state();
    return s;
  }
  const VariationalOde var(sys, p, with_param);
  Vec u0 = Vec::Zero(static_cast<Eigen::Index>(var.dim()));
  u0.head(n) = x;
  Eigen::Map<Mat>(u0.data() + n, n, n).setIdentity();
  const Vec u = integrate(var, u0, 0.0, dt, endpoint_options(o)).final_state();
  s.end = u.head(n);
  s.phi = Eigen::Map<const Mat>(u.data() + n, n, n);
  if (with_param) s.sens = u.tail(n);
  return s;
}

// Unknowns X = (x_0, ..., x_{m-1}, T [, p]).
struct Shooting {
  Vec residual;
  Mat jac;
  std::vector<Mat> phis;
};

Shooting shoot(const ParamSystem& sys, double p, const Vec& X, int m, const CycleOptions& o, bool jac,
               bool with_param) {
  const Eigen::Index n = static_cast<Eigen::Index>(sys.dim());
  const Eigen::Index nm = n * m;
  const double T = X[nm];
  const double dt = T / m;
  Shooting s;
  s.residual.resize(nm + 1);
  if (jac) s.jac = Mat::Zero(nm + 1, nm + 1 + (with_param ? 1 : 0));
  for (int i = 0; i < m; ++i) {
    const int next = (i + 1) % m;
    const Segment seg = flow_segment(sys, p, X.segment(i * n, n), dt, o, jac, with_param);
    s.residual.segment(i * n, n) = seg.end - X.segment(next * n, n);
    if (!jac) continue;
    s.jac.block(i * n, i * n, n, n) += seg.phi;
    s.jac.block(i * n, next * n, n, n) -= Mat::Identity(n, n);
    s.jac.block(i * n, nm, n, 1) = sys.rhs(seg.end, p) / m;
    if (with_param) s.jac.block(i * n, nm + 1, n, 1) = seg.sens;
    s.phis.push_back(seg.phi);
  }
  const Vec x0 = X.head(n);
  s.residual[nm] = sys.rhs(x0, p)[static_cast<Eigen::Index>(o.phase_var)];
  if (jac) {
    s.jac.block(nm, 0, 1, n) = sys.jacobian(x0, p).row(static_cast<Eigen::Index>(o.phase_var));
    if (with_param) {
      Vec fp;
      sys.dparam(x0, p, fp);
      s.jac(nm, nm + 1) = fp[static_cast<Eigen::Index>(o.phase_var)];
    }
  }
  return s;
}

double scaled_residual(const ParamSystem& sys, const Vec& r, int m, std::size_t phase_var) {
  const Vec scale = sys.scale();
  const Eigen::Index n = scale.size();
  double worst = 0.0;
  for (int i = 0; i < m; ++i)
    worst = std::max(worst, sup_norm(r.segment(i * n, n).cwiseQuotient(scale)));
  return std::max(worst, std::abs(r[n * m]) / scale[static_cast<Eigen::Index>(phase_var)]);
}

Vec initial_unknowns(const ParamSystem& sys, double p, const CycleSeed& seed, const CycleOptions& o) {
  const Eigen::Index n = static_cast<Eigen::Index>(sys.dim());
  const int m = o.segments;
  IntegratorOptions io;
  io.rel_tol = o.rel_tol;
  io.abs_tol = o.abs_tol;
  const Trajectory tr = integrate(FixedParamOde(sys, p), seed.state, 0.0, seed.period, io);
  Vec X(n * m + 1);
  for (int i = 0; i < m; ++i) X.segment(i * n, n) = i == 0 ? seed.state : tr.at(seed.period * i / m);
  X[n * m] = seed.period;
  return X;
}

ComplexVec sorted_multipliers(const Mat& monodromy) {
  Eigen::EigenSolver<Mat> solver(monodromy, false);
  if (solver.info() != Eigen::Success) throw NumericalError("eigen", "monodromy eigenvalues did not converge");
  ComplexVec mu(solver.eigenvalues().begin(), solver.eigenvalues().end());
  std::sort(mu.begin(), mu.end(), [](Complex l, Complex r) {
    if (std::abs(l) != std::abs(r)) return std::abs(l) > std::abs(r);
    return l.imag() > r.imag();
  });
  return mu;
}

Cycle finalize(const ParamSystem& sys, double p, const Vec& X_in, const CycleOptions& o) {
  const Eigen::Index n = static_cast<Eigen::Index>(sys.dim());
  const int m = o.segments;
  CycleOptions tight = o;
  tight.rel_tol = std::min(o.rel_tol, 1e-12);
  tight.abs_tol = std::min(o.abs_tol, 1e-13);

  // Chord steps against the tight flow: unstable cycles amplify the solver's
  // integration error in the single-shot closure.
  Vec X = X_in;
  const Shooting s = shoot(sys, p, X, m, tight, true, false);
  Vec r = s.residual;
  const Eigen::PartialPivLU<Mat> lu(s.jac);
  for (int k = 0; k < 3 && scaled_residual(sys, r, m, o.phase_var) > 1e-12; ++k) {
    const Vec next = X - lu.solve(r);
    if (!next.allFinite() || !(next[n * m] > o.min_period)) break;
    const Vec rn = shoot(sys, p, next, m, tight, false, false).residual;
    if (!(scaled_residual(sys, rn, m, o.phase_var) < scaled_residual(sys, r, m, o.phase_var))) break;
    X = next;
    r = rn;
  }
  Mat mono = Mat::Identity(n, n);
  for (const auto& phi : s.phis) mono = phi * mono;

  Cycle c;
  c.param = p;
  c.anchor = X.head(n);
  c.period = X[n * m];
  for (int i = 0; i < m; ++i) c.segments.push_back(X.segment(i * n, n));
  c.multipliers = sorted_multipliers(mono);
  c.trivial = 0;
  for (std::size_t i = 1; i < c.multipliers.size(); ++i)
    if (std::abs(c.multipliers[i] - 1.0) < std::abs(c.multipliers[c.trivial] - 1.0)) c.trivial = i;
  c.stability = classify_multipliers(c.nontrivial());

  CycleOptions closure = tight;
  closure.rel_tol = closure.abs_tol = 1e-13;
  const Trajectory orbit = cycle_orbit(sys, c, closure);
  c.residual = sys.scaled_norm(orbit.final_state() - c.anchor);
  c.v_min = INFINITY;
  c.v_max = -INFINITY;
  const auto v = static_cast<std::size_t>(o.phase_var);
  for (std::size_t i = 0; i < orbit.size(); ++i) {
    c.v_min = std::min(c.v_min, orbit.value(i, v));
    c.v_max = std::max(c.v_max, orbit.value(i, v));
    if (i + 1 < orbit.size()) {
      const double ta = orbit.times()[i], tb = orbit.times()[i + 1];
      for (int k = 1; k < 4; ++k) {
        const double val = orbit.at(ta + (tb - ta) * k / 4.0)[static_cast<Eigen::Index>(v)];
        c.v_min = std::min(c.v_min, val);
        c.v_max = std::max(c.v_max, val);
      }
    }
  }
  return c;
}

int sign_of(double v) { return (v > 0) - (v < 0); }

// Second time derivative of the phase variable at the anchor.
double apex_curvature(const ParamSystem& sys, const Cycle& c, std::size_t var) {
  const Vec f = sys.rhs(c.anchor, c.param);
  return sys.jacobian(c.anchor, c.param).row(static_cast<Eigen::Index>(var)).dot(f);
}

std::size_t unstable_count(const Cycle& c) {
  std::size_t k = 0;
  for (const auto& mu : c.nontrivial()) k += std::abs(mu) > 1.0;
  return k;
}

// Continuation coordinates: states / (scale sqrt(m)), T / period_scale, p / param_scale.
class ShootingSpace {
 public:
  ShootingSpace(const ParamSystem& sys, const CycleOptions& o, double period_scale, double param_scale)
      : sys_(sys), o_(o), n_(static_cast<Eigen::Index>(sys.dim())), m_(o.segments) {
    const Eigen::Index nm = n_ * m_;
    w_.resize(nm + 2);
    const Vec scale = sys.scale();
    for (int i = 0; i < m_; ++i) w_.segment(i * n_, n_) = scale * std::sqrt(static_cast<double>(m_));
    w_[nm] = period_scale;
    w_[nm + 1] = param_scale;
  }

  Eigen::Index size() const { return w_.size(); }
  Vec to_y(const Vec& X, double p) const {
    Vec u(w_.size());
    u.head(w_.size() - 1) = X;
    u[w_.size() - 1] = p;
    return u.cwiseQuotient(w_);
  }
  Vec to_y(const Cycle& c) const {
    Vec X(n_ * m_ + 1);
    for (int i = 0; i < m_; ++i) X.segment(i * n_, n_) = c.segments[i];
    X[n_ * m_] = c.period;
    return to_y(X, c.param);
  }
  Vec X_of(const Vec& y) const { return y.head(y.size() - 1).cwiseProduct(w_.head(w_.size() - 1)); }
  double p_of(const Vec& y) const { return y[y.size() - 1] * w_[w_.size() - 1]; }

  // Residual and normalized Jacobian ((nm+1) x (nm+2)).
  std::optional<Shooting> eval(const Vec& y) const {
    try {
      const Vec X = X_of(y);
      if (!(X[n_ * m_] > o_.min_period)) return std::nullopt;
      Shooting s = shoot(sys_, p_of(y), X, m_, o_, true, true);
      s.jac = s.jac * w_.asDiagonal();
      if (!s.residual.allFinite() || !s.jac.allFinite()) return std::nullopt;
      return s;
    } catch (const NumericalError&) {
      return std::nullopt;
    }
  }

  std::optional<Vec> tangent_from(const Mat& jn, const Vec& ref) const {
    Mat b(jn.rows() + 1, jn.cols());
    b.topRows(jn.rows()) = jn;
    b.row(jn.rows()) = ref.transpose();
    Eigen::PartialPivLU<Mat> lu(b);
    if (!(lu.rcond() > 1e-15)) return std::nullopt;
    Vec e = Vec::Zero(b.rows());
    e[b.rows() - 1] = 1.0;
    Vec t = lu.solve(e);
    if (!t.allFinite()) return std::nullopt;
    t.normalize();
    if (t.dot(ref) < 0) t = -t;
    return t;
  }

  std::optional<Vec> tangent(const Vec& y, const Vec& ref) const {
    const auto s = eval(y);
    if (!s) return std::nullopt;
    return tangent_from(s->jac, ref);
  }

  Vec null_tangent(const Vec& y) const {
    const auto s = eval(y);
    if (!s) throw NumericalError("continuation", "cannot evaluate the shooting system at the start cycle");
    Eigen::JacobiSVD<Mat> svd(s->jac, Eigen::ComputeFullV);
    return svd.matrixV().col(s->jac.cols() - 1).normalized();
  }

  struct Corrected {
    Vec y;
    int iterations = 0;
    Mat jac;
  };

  std::optional<Corrected> correct(const Vec& start, const Vec& anchor, const Vec& dir, int max_iter) const {
    Vec y = start;
    double first = -1.0;
    for (int it = 0; it <= max_iter; ++it) {
      const auto s = eval(y);
      if (!s) return std::nullopt;
      const double r = scaled_residual(sys_, s->residual, m_, o_.phase_var);
      if (first < 0) first = std::max(r, 1e-12);
      if (r > 1e3 * first + 1.0) return std::nullopt;
      const Eigen::Index k = s->jac.rows();
      Mat b(k + 1, s->jac.cols());
      b.topRows(k) = s->jac;
      b.row(k) = dir.transpose();
      Vec g(k + 1);
      g.head(k) = s->residual;
      g[k] = dir.dot(y - anchor);
      if (r <= o_.tol && std::abs(g[k]) <= 1e-10) return Corrected{y, it, s->jac};
      if (it == max_iter) break;
      Eigen::PartialPivLU<Mat> lu(b);
      if (!(lu.rcond() > 1e-15)) return std::nullopt;
      const Vec dy = lu.solve(-g);
      if (!dy.allFinite()) return std::nullopt;
      y += dy;
    }
    return std::nullopt;
  }

  Cycle cycle_at(const Vec& y) const { return finalize(sys_, p_of(y), X_of(y), o_); }

 private:
  const ParamSystem& sys_;
  CycleOptions o_;
  Eigen::Index n_;
  int m_;
  Vec w_;
};

}  // namespace

ComplexVec Cycle::nontrivial() const {
  ComplexVec out;
  for (std::size_t i = 0; i < multipliers.size(); ++i)
    if (i != trivial) out.push_back(multipliers[i]);
  return out;
}

Stability classify_multipliers(const ComplexVec& nontrivial, double margin) {
  bool inside = true, outside = true;
  for (const auto& mu : nontrivial) {
    inside = inside && std::abs(mu) < 1.0 - margin;
    outside = outside && std::abs(mu) > 1.0 + margin;
  }
  if (inside) return Stability::attracting;
  if (outside) return Stability::repelling;
  return Stability::saddle;
}

CycleSeed seed_from_trajectory(const Trajectory& traj, std::size_t apex_event) {
  std::vector<const Event*> hits;
  for (const auto& ev : traj.events)
    if (ev.spec == apex_event) hits.push_back(&ev);
  if (hits.size() < 2) throw ConfigError("cycle seed needs at least two apex events");
  const Event& last = *hits.back();
  const Event& prev = *hits[hits.size() - 2];
  return {last.y, last.t - prev.t};
}

Trajectory cycle_orbit(const ParamSystem& sys, const Cycle& cycle, const CycleOptions& options) {
  IntegratorOptions io;
  io.rel_tol = options.rel_tol;
  io.abs_tol = options.abs_tol;
  return integrate(FixedParamOde(sys, cycle.param), cycle.anchor, 0.0, cycle.period, io);
}

Cycle find_cycle(const ParamSystem& sys, double p, const CycleSeed& seed, const CycleOptions& o) {
  const Eigen::Index n = static_cast<Eigen::Index>(sys.dim());
  if (seed.state.size() != n)
    throw ConfigError(fmt::format("cycle seed has length {}, system expects {}", seed.state.size(), n));
  if (o.segments < 1) throw ConfigError("at least one shooting segment is required");
  if (!(seed.period > o.min_period))
    throw NumericalError("degenerate_orbit", fmt::format("seed period {} is below {}", seed.period, o.min_period));
  const int m = o.segments;
  Vec X = initial_unknowns(sys, p, seed, o);
  double r = INFINITY;
  for (int it = 0; it < o.max_iter; ++it) {
    const Shooting s = shoot(sys, p, X, m, o, true, false);
    r = scaled_residual(sys, s.residual, m, o.phase_var);
    if (r <= o.tol) break;
    Eigen::PartialPivLU<Mat> lu(s.jac);
    if (!(lu.rcond() > 1e-15))
      throw NewtonFailure("singular", "shooting Jacobian is singular", X.head(n), r);
    const Vec dX = lu.solve(-s.residual);
    Vec best = X + dX;
    for (double lambda = 1.0; lambda >= 1.0 / 16; lambda *= 0.5) {
      const Vec trial = X + lambda * dX;
      if (!(trial[n * m] > o.min_period)) continue;
      try {
        const Shooting st = shoot(sys, p, trial, m, o, false, false);
        if (scaled_residual(sys, st.residual, m, o.phase_var) < r) {
          best = trial;
          break;
        }
      } catch (const NumericalError&) {
      }
    }
    X = best;
    if (!(X[n * m] > o.min_period))
      throw NumericalError("degenerate_orbit", fmt::format("period collapsed to {}", X[n * m]));
  }
  if (!(r <= o.tol))
    throw NewtonFailure("no_convergence",
                        fmt::format("cycle Newton did not converge at {} = {} (residual {:.3g})", sys.param_name(), p, r),
                        X.head(n), r);
  Cycle c = finalize(sys, p, X, o);
  if (!(apex_curvature(sys, c, o.phase_var) < 0))
    throw NumericalError("phase", "cycle anchor is a minimum of the phase variable, not an apex");
  return c;
}

std::vector<std::size_t> match_multipliers(const ComplexVec& prev, const ComplexVec& next, bool* tie) {
  const std::size_t n = next.size();
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), 0);
  if (prev.size() != n) return perm;
  double best_cost = INFINITY, second = INFINITY;
  if (n <= 8) {
    do {
      double cost = 0.0;
      for (std::size_t i = 0; i < n; ++i) cost += std::abs(prev[i] - next[perm[i]]);
      if (cost < best_cost) {
        second = best_cost;
        best_cost = cost;
        best = perm;
      } else if (cost < second) {
        second = cost;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::vector<bool> used(n, false);
    best.resize(n);
    best_cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t pick = n;
      for (std::size_t j = 0; j < n; ++j)
        if (!used[j] && (pick == n || std::abs(prev[i] - next[j]) < std::abs(prev[i] - next[pick]))) pick = j;
      used[pick] = true;
      best[i] = pick;
      best_cost += std::abs(prev[i] - next[pick]);
    }
  }
  if (tie) *tie = second - best_cost <= 1e-9 + 1e-6 * best_cost;
  return best;
}

CycleBranch continue_cycles(const ParamSystem& sys, const Cycle& start, const CycleContinuationOptions& opt,
                            const CycleOptions& co) {
  if (!(opt.p_max > opt.p_min)) throw ConfigError("continuation range is empty");
  if (!(opt.ds_min > 0 && opt.ds_min <= opt.ds && opt.ds <= opt.ds_max))
    throw ConfigError("continuation steps must satisfy 0 < ds_min <= ds <= ds_max");
  if (start.segments.size() != static_cast<std::size_t>(co.segments))
    throw ConfigError("start cycle was computed with a different segment count");

  CycleBranch branch;
  branch.param_name = sys.param_name();
  branch.param_scale = opt.param_scale > 0 ? opt.param_scale : opt.p_max - opt.p_min;
  branch.period_scale = start.period;
  const ShootingSpace space(sys, co, branch.period_scale, branch.param_scale);
  const Eigen::Index last = space.size() - 1;

  Vec y = space.to_y(start);
  Vec t = space.null_tangent(y);
  if (t[last] * opt.direction < 0) t = -t;
  branch.cycles.push_back(start);
  branch.tracked.push_back(start.multipliers);
  branch.ambiguous.push_back(false);
  branch.tangents.push_back(t);

  double ds = opt.ds;
  const double ds_cap = 0.9 * opt.ds_max;
  int halvings = 0;
  int tie_retries = 0;
  Vec dir = t;

  while (branch.cycles.size() < opt.max_points) {
    const Vec pred = y + ds * dir;
    const auto corrected = space.correct(pred, pred, dir, opt.corrector_iter);
    std::optional<Vec> t_new;
    double dist = 0.0;
    if (corrected) {
      dist = (corrected->y - y).norm();
      t_new = space.tangent_from(corrected->jac, dir);
    }
    const bool ok = corrected && t_new && dist <= opt.ds_max && dist <= 2.0 * ds && t_new->dot(t) > 0.5;
    if (!ok) {
      if (!corrected) ++halvings;
      ds *= 0.5;
      if (halvings > opt.max_halvings || ds < opt.ds_min) {
        branch.end_reason = "truncated";
        branch.diagnostic = fmt::format("cycle corrector failed near {} = {} (ds = {:.3g})", branch.param_name,
                                        space.p_of(y), ds);
        break;
      }
      continue;
    }
    const Vec y_new = corrected->y;
    const double p_new = space.p_of(y_new);
    const bool outside = p_new > opt.p_max || p_new < opt.p_min;
    Vec y_keep = y_new;
    Vec t_keep = *t_new;
    if (outside) {
      // Land on the boundary: fix p with a parameter-only border.
      const double edge = p_new > opt.p_max ? opt.p_max : opt.p_min;
      const double w = (edge - space.p_of(y)) / (p_new - space.p_of(y));
      const Vec guess = y + w * (y_new - y);
      Vec ep = Vec::Zero(space.size());
      ep[last] = 1.0;
      Vec anchor = guess;
      anchor[last] = edge / branch.param_scale;
      const auto c = space.correct(guess, anchor, ep, 12);
      if (!c) {
        branch.end_reason = "range";
        break;
      }
      y_keep = c->y;
      t_keep = space.tangent_from(c->jac, dir).value_or(dir);
    }
    Cycle cyc;
    try {
      cyc = space.cycle_at(y_keep);
    } catch (const NumericalError& e) {
      branch.end_reason = "truncated";
      branch.diagnostic = e.what();
      break;
    }
    // The anchor turning into a minimum means the step went through the
    // Hopf point, where the orbit shrinks to the equilibrium.
    if (!(apex_curvature(sys, cyc, co.phase_var) < 0)) {
      ds *= 0.5;
      if (ds < opt.ds_min) {
        branch.end_reason = "hopf_terminus";
        break;
      }
      continue;
    }
    bool tie = false;
    const auto perm = match_multipliers(branch.tracked.back(), cyc.multipliers, &tie);
    if (tie && tie_retries < 2 && ds > 4 * opt.ds_min && !outside) {
      ++tie_retries;
      ds *= 0.5;
      continue;
    }
    tie_retries = 0;
    halvings = 0;
    ComplexVec tracked(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) tracked[i] = cyc.multipliers[perm[i]];

    branch.cycles.push_back(std::move(cyc));
    branch.tracked.push_back(std::move(tracked));
    branch.ambiguous.push_back(tie);
    branch.tangents.push_back(t_keep);
    dir = (y_keep - y).normalized();
    y = y_keep;
    t = t_keep;

    const Cycle& added = branch.cycles.back();
    if (outside) {
      branch.end_reason = "range";
      break;
    }
    if (added.amplitude() < opt.min_amplitude) {
      branch.end_reason = "hopf_terminus";
      break;
    }
    if (added.period > opt.max_period_factor * start.period) {
      branch.end_reason = "period_cap";
      break;
    }
    if (corrected->iterations <= 3)
      ds = std::min(ds * 1.3, ds_cap);
    else if (corrected->iterations >= 6)
      ds = std::max(ds * 0.7, opt.ds_min);
  }
  if (branch.end_reason.empty()) branch.end_reason = "max_points";
  if (opt.detect) branch.bifurcations = detect_cycle_bifurcations(sys, branch, co);
  return branch;
}

std::vector<CycleBifurcation> detect_cycle_bifurcations(const ParamSystem& sys, const CycleBranch& branch,
                                                        const CycleOptions& co) {
  std::vector<CycleBifurcation> out;
  if (branch.cycles.size() < 2) return out;
  const ShootingSpace space(sys, co, branch.period_scale, branch.param_scale);
  const Eigen::Index last = space.size() - 1;

  for (std::size_t k = 0; k + 1 < branch.cycles.size(); ++k) {
    const Cycle& a = branch.cycles[k];
    const Cycle& b = branch.cycles[k + 1];
    const Vec ya = space.to_y(a), yb = space.to_y(b);
    const Vec d = (yb - ya).normalized();
    const double len = (yb - ya).norm();

    auto point_at = [&](double s) { return space.correct(ya + s * d, ya + s * d, d, 20); };
    // Bisection on an integer-valued test; returns the corrected point nearest the switch.
    auto bisect = [&](auto&& test, int sa) -> std::optional<Vec> {
      double lo = 0.0, hi = len;
      std::optional<Vec> best;
      for (int it = 0; it < 50 && hi - lo > 1e-10; ++it) {
        const double mid = 0.5 * (lo + hi);
        const auto c = point_at(mid);
        if (!c) return std::nullopt;
        const auto s = test(*c);
        if (!s) return std::nullopt;
        best = c->y;
        (*s == sa ? lo : hi) = mid;
      }
      return best;
    };

    const int fa = sign_of(branch.tangents[k][last]), fb = sign_of(branch.tangents[k + 1][last]);
    const std::size_t ua = unstable_count(a), ub = unstable_count(b);
    if (fa != 0 && fb != 0 && fa != fb) {
      CycleBifurcation bif;
      bif.kind = "fold_lc";
      bif.segment = k;
      const auto y = bisect(
          [&](const auto& c) -> std::optional<int> {
            const auto tm = space.tangent_from(c.jac, d);
            if (!tm) return std::nullopt;
            return sign_of((*tm)[last]);
          },
          fa);
      try {
        if (!y) throw NumericalError("refine", "fold refinement failed");
        bif.cycle = space.cycle_at(*y);
        bif.param = bif.cycle.param;
        const auto nt = bif.cycle.nontrivial();
        bif.crossing = *std::min_element(nt.begin(), nt.end(), [](Complex l, Complex r) {
          return std::abs(l - 1.0) < std::abs(r - 1.0);
        });
        bif.suspected = ua == ub || std::abs(bif.crossing - 1.0) > 1e-4;
      } catch (const NumericalError&) {
        bif.cycle = a;
        bif.param = 0.5 * (a.param + b.param);
        bif.suspected = true;
      }
      out.push_back(std::move(bif));
      continue;
    }
    if (ua != ub) {
      // Crossing without a turn: torus if the crossing pair is complex.
      const auto& ta = branch.tracked[k];
      const auto& tb = branch.tracked[k + 1];
      bool complex_cross = false;
      for (std::size_t j = 0; j < ta.size(); ++j)
        if ((std::abs(ta[j]) - 1.0) * (std::abs(tb[j]) - 1.0) < 0 && std::abs(ta[j].imag()) > 1e-6 &&
            std::abs(tb[j].imag()) > 1e-6)
          complex_cross = true;
      if (!complex_cross) continue;
      CycleBifurcation bif;
      bif.kind = "torus";
      bif.segment = k;
      const auto y = bisect(
          [&](const auto& c) -> std::optional<int> {
            try {
              return static_cast<int>(unstable_count(space.cycle_at(c.y)));
            } catch (const NumericalError&) {
              return std::nullopt;
            }
          },
          static_cast<int>(ua));
      try {
        if (!y) throw NumericalError("refine", "torus refinement failed");
        bif.cycle = space.cycle_at(*y);
        bif.param = bif.cycle.param;
        const auto nt = bif.cycle.nontrivial();
        Complex pick = nt.front();
        for (const auto& mu : nt)
          if (std::abs(mu.imag()) > 1e-6 &&
              (std::abs(pick.imag()) <= 1e-6 || std::abs(std::abs(mu) - 1) < std::abs(std::abs(pick) - 1)))
            pick = mu;
        bif.crossing = pick;
        bif.suspected = std::abs(std::abs(pick) - 1.0) > 1e-4;
      } catch (const NumericalError&) {
        bif.cycle = a;
        bif.param = 0.5 * (a.param + b.param);
        bif.suspected = true;
      }
      out.push_back(std::move(bif));
    }
  }
  if (branch.end_reason == "hopf_terminus") {
    CycleBifurcation bif;
    bif.kind = "hopf_terminus";
    bif.cycle = branch.cycles.back();
    bif.param = bif.cycle.param;
    bif.segment = branch.cycles.size() - 1;
    out.push_back(std::move(bif));
  }
  return out;
}

}  // namespace canard
