#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "canard/integrator.hpp"
#include "canard/model.hpp"
#include "canard/types.hpp"

namespace canard {

/// Vector field f(x, p) depending on one scalar parameter.
class ParamSystem {
 public:
  virtual ~ParamSystem() = default;
  virtual std::size_t dim() const = 0;
  virtual void rhs(const Vec& x, double p, Vec& f) const = 0;
  /// df/dx. Central differences unless overridden.
  virtual void jacobian(const Vec& x, double p, Mat& jac) const;
  /// df/dp. Central differences unless overridden.
  virtual void dparam(const Vec& x, double p, Vec& fp) const;
  /// Typical magnitude of each state component, used for norms.
  virtual Vec scale() const { return Vec::Ones(static_cast<Eigen::Index>(dim())); }
  /// Integration step cap at (x, p).
  virtual double max_step(const Vec& /*x*/, double /*p*/) const { return std::numeric_limits<double>::infinity(); }
  virtual std::string param_name() const { return "p"; }
  virtual std::vector<std::string> state_names() const;

  Vec rhs(const Vec& x, double p) const {
    Vec f;
    rhs(x, p, f);
    return f;
  }
  Mat jacobian(const Vec& x, double p) const {
    Mat j;
    jacobian(x, p, j);
    return j;
  }
  /// max_i |v_i| / scale_i
  double scaled_norm(const Vec& v) const;
};

/// Lambda-backed system for normal forms and tests.
class FunctionParamSystem : public ParamSystem {
 public:
  using Rhs = std::function<void(const Vec&, double, Vec&)>;
  using Jac = std::function<void(const Vec&, double, Mat&)>;
  using Dp = std::function<void(const Vec&, double, Vec&)>;

  FunctionParamSystem(std::size_t dim, Rhs rhs, Jac jac = {}, Dp dp = {}, std::string param = "mu")
      : dim_(dim), rhs_(std::move(rhs)), jac_(std::move(jac)), dp_(std::move(dp)), param_(std::move(param)) {}

  std::size_t dim() const override { return dim_; }
  void rhs(const Vec& x, double p, Vec& f) const override { rhs_(x, p, f); }
  void jacobian(const Vec& x, double p, Mat& jac) const override;
  void dparam(const Vec& x, double p, Vec& fp) const override;
  std::string param_name() const override { return param_; }
  using ParamSystem::jacobian;
  using ParamSystem::rhs;

 private:
  std::size_t dim_;
  Rhs rhs_;
  Jac jac_;
  Dp dp_;
  std::string param_;
};

/// The full model with the drive J as parameter.
class DriveSystem : public ParamSystem {
 public:
  explicit DriveSystem(ModelSpec spec) : spec_(std::move(spec)) {}

  std::size_t dim() const override { return spec_.dim(); }
  void rhs(const Vec& x, double J, Vec& f) const override;
  void jacobian(const Vec& x, double J, Mat& jac) const override;
  void dparam(const Vec& x, double J, Vec& fp) const override;
  Vec scale() const override;
  double max_step(const Vec& x, double J) const override;
  std::string param_name() const override { return spec_.drive_name(); }
  std::vector<std::string> state_names() const override { return spec_.state_names(); }
  using ParamSystem::jacobian;
  using ParamSystem::rhs;

  const ModelSpec& spec() const noexcept { return spec_; }

 private:
  ModelSpec spec_;
};

/// Fast subsystem: one slow state variable of the full model is held fixed
/// and becomes the parameter. States are the full state with that component
/// removed.
class FrozenSlowSystem : public ParamSystem {
 public:
  FrozenSlowSystem(ModelSpec spec, const std::string& slow_var, double J);

  std::size_t dim() const override { return spec_.dim() - 1; }
  void rhs(const Vec& x, double m, Vec& f) const override;
  void jacobian(const Vec& x, double m, Mat& jac) const override;
  void dparam(const Vec& x, double m, Vec& fp) const override;
  Vec scale() const override;
  double max_step(const Vec& x, double m) const override;
  std::string param_name() const override { return slow_var_; }
  std::vector<std::string> state_names() const override;
  using ParamSystem::jacobian;
  using ParamSystem::rhs;

  /// Full-model state with the slow component set to m.
  Vec embed(const Vec& x, double m) const;
  /// Drops the slow component of a full-model state.
  Vec project(const Vec& y) const;
  double slow_value(const Vec& y) const { return y[slow_index_]; }
  /// Steady state of the fast gates at voltage V.
  Vec steady_state(double V) const;

  const ModelSpec& spec() const noexcept { return spec_; }
  double drive() const noexcept { return J_; }
  Eigen::Index slow_index() const noexcept { return slow_index_; }

 private:
  ModelSpec spec_;
  std::string slow_var_;
  Eigen::Index slow_index_;
  double J_;
};

/// A ParamSystem frozen at one parameter value, for the integrator.
class FixedParamOde : public OdeSystem {
 public:
  FixedParamOde(const ParamSystem& sys, double p) : sys_(sys), p_(p) {}
  std::size_t dim() const override { return sys_.dim(); }
  void rhs(double, const Vec& y, Vec& dy) const override { sys_.rhs(y, p_, dy); }
  double max_step(const Vec& y) const override { return sys_.max_step(y, p_); }

 private:
  const ParamSystem& sys_;
  double p_;
};

}  // namespace canard
