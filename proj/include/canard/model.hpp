#pragma once

#include <atomic>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "canard/expr.hpp"
#include "canard/types.hpp"

namespace canard {

/// Gating variable with relaxation kinetics dx/dt = (x0[V] - x) / tau[V],
/// or an instantaneous gate replaced by x0[V].
struct GateSpec {
  std::string name;
  bool instantaneous = false;
  Expr xinf;
  std::optional<Expr> tau;
};

struct GateFactor {
  std::string var;
  int exponent = 1;
};

/// Ohmic current g * prod(gate^exponent) * (V - reversal).
struct CurrentSpec {
  std::string name;
  double g = 0.0;
  double reversal = 0.0;
  std::vector<GateFactor> gates;
};

/// How eval_rhs treats gate values outside [0, 1].
enum class GateCheck {
  /// Clamp excursions up to 1e-9 and raise PoisonError beyond that.
  strict,
  /// Accept any finite gate value (Newton iterates may leave [0, 1]).
  relaxed,
};

struct TimescaleRow {
  std::string gate;
  bool slow = false;
  double tau_min = 0.0;
  double tau_max = 0.0;
};

struct TimescaleAudit {
  std::vector<TimescaleRow> rows;
  /// min over slow gates of tau_min / max over fast gates of tau_max, on the
  /// full audit grid.
  double global_ratio = 0.0;
  /// min over V in the operating window of tau_slow(V) / max_fast tau(V).
  double pointwise_ratio = 0.0;
  double window_lo = 0.0;
  double window_hi = 0.0;
  /// True when the slow gates are at least `required_ratio` times slower than
  /// every fast gate throughout the operating window.
  bool separated = false;
};

/// Conductance-based membrane model: a voltage equation driven by -J and a
/// set of gates. Slow gates can be frozen into parameters to obtain the fast
/// subsystem. Immutable once built.
class ModelSpec {
 public:
  static constexpr double kGateTolerance = 1e-9;
  static constexpr double kGridLo = -120.0;
  static constexpr double kGridHi = 60.0;

  /// Validates and compiles a model. Throws ConfigError on schema or range
  /// violations.
  ModelSpec(std::string name, double capacitance, std::vector<CurrentSpec> currents,
            std::vector<GateSpec> gates, std::vector<std::string> slow,
            std::string drive = "J");

  const std::string& name() const noexcept { return name_; }
  double capacitance() const noexcept { return capacitance_; }
  const std::string& drive_name() const noexcept { return drive_; }
  const std::vector<CurrentSpec>& currents() const noexcept { return currents_; }
  const std::vector<GateSpec>& gates() const noexcept { return gates_; }
  const std::vector<std::string>& slow() const noexcept { return slow_; }
  const std::map<std::string, double>& frozen() const noexcept { return frozen_; }

  /// State dimension (V plus non-instantaneous, non-frozen gates).
  std::size_t dim() const noexcept { return state_names_.size(); }
  const std::vector<std::string>& state_names() const noexcept { return state_names_; }
  /// Index of a state variable, or nullopt.
  std::optional<std::size_t> index_of(const std::string& var) const;

  Vec eval_rhs(const Vec& y, double J, GateCheck check = GateCheck::strict) const;
  void eval_rhs(const Vec& y, double J, Vec& dy, GateCheck check = GateCheck::strict) const;
  Mat jacobian(const Vec& y, double J, GateCheck check = GateCheck::strict) const;
  void jacobian(const Vec& y, double J, Mat& jac, GateCheck check = GateCheck::strict) const;
  /// Derivative of the right-hand side with respect to J.
  Vec drive_derivative() const;
  /// Derivative of the right-hand side with respect to a frozen slow variable.
  Vec frozen_derivative(const Vec& y, double J, const std::string& var) const;

  /// Fast subsystem: the designated slow variables become constants.
  ModelSpec freeze_slow(const std::map<std::string, double>& values) const;
  /// Same frozen structure with different frozen values.
  ModelSpec with_frozen(const std::map<std::string, double>& values) const;
  /// Copy with one current's maximal conductance replaced.
  ModelSpec with_conductance(const std::string& current, double g) const;

  /// Gates evaluated at their steady state for voltage V; frozen gates keep
  /// their frozen value.
  Vec steady_state(double V) const;
  /// Smallest tau over the dynamic, non-slow gates at this state.
  double min_fast_tau(const Vec& y) const;

  TimescaleAudit timescale_audit(double required_ratio = 10.0, double window_lo = -75.0,
                                 double window_hi = 40.0) const;

  /// Number of gate values clamped into [0, 1] so far (diagnostic).
  std::size_t clamp_count() const noexcept;

 private:
  struct CompiledGate {
    Expr xinf, dxinf, tau, dtau;
    bool instantaneous = false;
    bool slow = false;
    int full_index = -1;   // position in the unfrozen state, -1 if instantaneous
    int state_index = -1;  // position in this spec's state, -1 if frozen/instantaneous
    std::optional<double> frozen;
  };
  struct CompiledFactor {
    int gate = 0;
    int exponent = 1;
  };
  struct CompiledCurrent {
    double g = 0.0;
    double reversal = 0.0;
    std::vector<CompiledFactor> factors;
  };

  void compile();
  void rebuild_layout();
  void validate_gate_ranges() const;
  double gate_value(int gate, const Vec& y, double V, const double* xinf, GateCheck check) const;
  template <bool WithJacobian>
  void evaluate(const Vec& y, double J, Vec& dy, Mat* jac, GateCheck check) const;

  std::string name_;
  double capacitance_ = 1.0;
  std::string drive_;
  std::vector<CurrentSpec> currents_;
  std::vector<GateSpec> gates_;
  std::vector<std::string> slow_;
  std::map<std::string, double> frozen_;

  std::vector<CompiledGate> compiled_gates_;
  std::vector<CompiledCurrent> compiled_currents_;
  std::vector<std::string> state_names_;
  std::shared_ptr<std::atomic<std::size_t>> clamp_counter_;
};

}  // namespace canard
