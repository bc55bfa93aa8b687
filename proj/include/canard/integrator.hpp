#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "canard/model.hpp"
#include "canard/types.hpp"

namespace canard {

/// Autonomous-or-not ODE y' = f(t, y) as seen by the integrator.
class OdeSystem {
 public:
  virtual ~OdeSystem() = default;
  virtual std::size_t dim() const = 0;
  virtual void rhs(double t, const Vec& y, Vec& dy) const = 0;
  /// Upper bound on the step size at state y.
  virtual double max_step(const Vec& /*y*/) const { return std::numeric_limits<double>::infinity(); }
};

/// The model at a fixed drive J. Steps are capped at `tau_fraction` times the
/// smallest fast time constant at the current state so spikes are resolved.
class ModelSystem : public OdeSystem {
 public:
  ModelSystem(ModelSpec spec, double J, double tau_fraction = 0.25)
      : spec_(std::move(spec)), J_(J), tau_fraction_(tau_fraction) {}

  std::size_t dim() const override { return spec_.dim(); }
  void rhs(double, const Vec& y, Vec& dy) const override { spec_.eval_rhs(y, J_, dy); }
  double max_step(const Vec& y) const override { return tau_fraction_ * spec_.min_fast_tau(y); }

  const ModelSpec& spec() const noexcept { return spec_; }
  double drive() const noexcept { return J_; }

 private:
  ModelSpec spec_;
  double J_;
  double tau_fraction_;
};

/// Adapter for lambdas, mostly used by tests and toy systems.
class FunctionSystem : public OdeSystem {
 public:
  using Rhs = std::function<void(double, const Vec&, Vec&)>;
  FunctionSystem(std::size_t dim, Rhs rhs) : dim_(dim), rhs_(std::move(rhs)) {}
  std::size_t dim() const override { return dim_; }
  void rhs(double t, const Vec& y, Vec& dy) const override { rhs_(t, y, dy); }

 private:
  std::size_t dim_;
  Rhs rhs_;
};

enum class EventKind {
  /// Local maximum of a variable: its derivative crosses zero downward while
  /// the variable is above the arming threshold.
  apex,
  /// A variable crosses a level in the given direction.
  crossing,
};

struct EventSpec {
  EventKind kind = EventKind::apex;
  std::size_t variable = 0;
  double level = 0.0;
  /// +1 upward, -1 downward, 0 either (crossing events only).
  int direction = 0;
  double arm_threshold = -20.0;
  double time_tol = 1e-7;

  static EventSpec apex(std::size_t variable = 0, double arm_threshold = -20.0) {
    return {EventKind::apex, variable, 0.0, -1, arm_threshold, 1e-7};
  }
  static EventSpec crossing(std::size_t variable, double level, int direction = 0) {
    return {EventKind::crossing, variable, level, direction, -std::numeric_limits<double>::infinity(), 1e-7};
  }
  std::string label() const { return kind == EventKind::apex ? "apex" : "crossing"; }
};

struct Event {
  std::size_t spec = 0;
  EventKind kind = EventKind::apex;
  double t = 0.0;
  Vec y;
  /// Event function value at the reported time (dV/dt for apexes).
  double g = 0.0;
  /// Sign of the event function's slope (-1 for apexes).
  double slope = 0.0;
};

struct SolverStats {
  std::size_t steps = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evals = 0;
};

struct IntegratorOptions {
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  double max_step = std::numeric_limits<double>::infinity();
  double initial_step = 0.0;
  double min_step = 1e-12;
  /// Store per-step interpolation coefficients.
  bool keep_dense = true;
  /// Store accepted step states (otherwise only the endpoints and events).
  bool keep_states = true;
};

/// Solution of an initial value problem with dense output and an event log.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return times_.size(); }
  const std::vector<double>& times() const noexcept { return times_; }
  double t0() const { return times_.front(); }
  double t1() const { return times_.back(); }
  Vec state(std::size_t i) const;
  double value(std::size_t i, std::size_t var) const { return states_[i * dim_ + var]; }
  Vec final_state() const { return state(size() - 1); }
  /// Dense-output evaluation (requires keep_dense).
  Vec at(double t) const;
  bool has_dense() const noexcept { return !dense_.empty(); }

  std::vector<Event> events;
  SolverStats stats;
  /// False when integrate_until hit its time cap before the stop count.
  bool complete = true;
  std::string note;

  // Used by the integrator.
  void push_state(double t, const Vec& y);
  void push_step(double t0, double h, const Vec* coeffs);

 private:
  std::size_t locate(double t) const;

  std::size_t dim_ = 0;
  std::vector<double> times_;
  std::vector<double> states_;
  // Per step: start time, step length and five coefficient vectors.
  std::vector<double> step_t0_;
  std::vector<double> step_h_;
  std::vector<double> dense_;
};

/// Explicit Dormand-Prince 5(4) integration with PI step control, dense output
/// and event location.
Trajectory integrate(const OdeSystem& system, const Vec& y0, double t0, double t1,
                     const IntegratorOptions& options = {}, const std::vector<EventSpec>& events = {});

struct StopCondition {
  std::size_t event = 0;
  std::size_t count = 1;
  /// Hard cap on integrated time (ms).
  double time_cap = 10000.0;
};

/// Integrates until event `stop.event` has fired `stop.count` times. If the
/// cap is reached first the partial trajectory is returned with
/// complete = false.
Trajectory integrate_until(const OdeSystem& system, const Vec& y0, double t0,
                           const std::vector<EventSpec>& events, const StopCondition& stop,
                           const IntegratorOptions& options = {});

}  // namespace canard
