#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "canard/cycles.hpp"
#include "canard/equilibria.hpp"
#include "canard/integrator.hpp"
#include "canard/model.hpp"

namespace canard {

// ---------------------------------------------------------------------------
// Spike-apex Poincaré section

struct PoincareSample {
  double t = 0.0;
  Vec state;
  /// dV/dt and d2V/dt2 at the sample.
  double dv = 0.0;
  double d2v = 0.0;
};

struct PoincareSeries {
  double J = 0.0;
  std::size_t v_index = 0;
  std::size_t m_index = 0;
  std::vector<PoincareSample> samples;
  std::size_t transient = 0;
  bool complete = true;
  std::string note;

  std::size_t size() const noexcept { return samples.size(); }
  double v(std::size_t k) const { return samples[k].state[static_cast<Eigen::Index>(v_index)]; }
  double m(std::size_t k) const { return samples[k].state[static_cast<Eigen::Index>(m_index)]; }
};

struct PoincareOptions {
  IntegratorOptions integrator{};
  double arm_threshold = -20.0;
  /// Event time tolerance; sets how close dV/dt is to zero at a sample.
  double time_tol = 1e-10;
  /// Integration cap per requested sample (ms).
  double cap_per_sample = 50.0;
  std::string slow = "M";
};

PoincareSeries poincare_series(const ModelSpec& spec, double J, const Vec& y0, std::size_t n_samples,
                               std::size_t n_transient = 200, const PoincareOptions& options = {});

/// |dV/dt| <= tol and d2V/dt2 < 0.
bool satisfies_apex(const PoincareSample& s, double tol);

// ---------------------------------------------------------------------------
// Fixed points of return maps

using MapFn = std::function<Vec(const Vec&)>;

struct MapFixedPoint {
  double J = 0.0;
  Vec state;
  /// Sorted by decreasing modulus.
  ComplexVec multipliers;
  bool stable = false;
  /// Scaled sup norm of P(x) - x.
  double residual = 0.0;
  /// Return time (flow maps only).
  double period = 0.0;
};

struct MapNewtonOptions {
  double tol = 1e-12;
  int max_iter = 50;
  /// One-sided difference step, relative to the scale.
  double fd_step = 1e-6;
};

/// Newton on P(x) - x with a finite-difference Jacobian of P.
MapFixedPoint map_fixed_point(const MapFn& map, const Vec& seed, const Vec& scale = Vec(),
                              const MapNewtonOptions& options = {});

/// Fixed point of the spike-apex return map of the full model at drive J,
/// from a state near the section. Multipliers are the nontrivial Floquet
/// multipliers of the corresponding periodic orbit.
MapFixedPoint map_fixed_point(const ModelSpec& spec, double J, const Vec& seed,
                              const CycleOptions& options = {});

/// One application of the apex return map from a state on the section.
PoincareSample apex_return(const ModelSpec& spec, double J, const Vec& x, const PoincareOptions& options = {});

/// Largest modulus among non-real multipliers, or -1 when none is complex.
double complex_pair_modulus(const ComplexVec& multipliers, Complex* which = nullptr);

// ---------------------------------------------------------------------------
// Torus bifurcation

struct TorusLocation {
  double J = 0.0;
  MapFixedPoint fixed_point;
  double modulus = 0.0;
  double angle = 0.0;
  double rotation_number = 0.0;
  /// Parameter values visited before bisection and their pair moduli.
  std::vector<double> grid;
  std::vector<double> grid_moduli;
  /// Pair modulus grows with the parameter along the grid.
  bool modulus_increases = false;
  bool monotone = false;
  int iterations = 0;
};

/// Map fixed point at parameter p, continued from `near` when given.
using FixedPointFamily = std::function<MapFixedPoint(double p, const MapFixedPoint* near)>;

struct TorusOptions {
  /// Bisection stops when the bracket is this narrow.
  double tol = 1e-4;
  /// Largest natural-continuation step while scanning the bracket.
  double grid_step = 0.01;
  CycleOptions cycle{};
  /// Warm-up before seeding the fixed point by simulation (ms).
  double warmup = 3000.0;
};

/// Bisection on (complex-pair modulus - 1) inside [a, b].
TorusLocation locate_torus_bifurcation(const FixedPointFamily& family, double a, double b,
                                       const TorusOptions& options = {});

/// Model version; the fixed point is seeded by simulation at whichever
/// bracket end gives a converged cycle and continued across the bracket.
TorusLocation locate_torus_bifurcation(const ModelSpec& spec, double a, double b, const TorusOptions& options = {});

/// Normal form z -> (1 + mu) e^{i theta} z - z |z|^2 as a map on R^2.
MapFn neimark_sacker_map(double mu, double theta);

/// Iterates a map, discarding `transient` iterates.
std::vector<Vec> map_orbit(const MapFn& map, const Vec& x0, std::size_t n, std::size_t transient = 0);

struct CriticalityFit {
  std::vector<double> distances;
  std::vector<double> radii;
  /// r = c * sqrt(distance), least squares through the origin.
  double coefficient = 0.0;
  double r_squared = 0.0;
  bool supercritical = false;
};

CriticalityFit fit_sqrt_scaling(const std::vector<double>& distances, const std::vector<double>& radii,
                                double min_r_squared = 0.95);

/// Mean distance of the samples from `center` in the (V, M) plane, with V and
/// M divided by the given scales.
double invariant_curve_radius(const PoincareSeries& series, double v_center, double m_center, double v_scale = 100.0,
                              double m_scale = 1.0);

struct CriticalityOptions {
  std::vector<double> offsets{0.002, 0.004, 0.006, 0.008, 0.010};
  std::size_t block = 500;
  std::size_t max_blocks = 40;
  double settle_tol = 2e-3;
  PoincareOptions poincare{};
};

/// Invariant-curve radius on the unstable side of J_TB and its sqrt fit.
CriticalityFit torus_criticality(const ModelSpec& spec, const TorusLocation& location,
                                 const CriticalityOptions& options = {});

enum class MapAttractor { fixed_point, invariant_circle, irregular };
std::string to_string(MapAttractor a);

struct AttractorOptions {
  double diameter_tol = 1e-4;
  double spread_tol = 0.05;
  double rotation_fraction = 0.95;
  std::size_t min_samples = 500;
  double v_scale = 100.0;
  double m_scale = 1.0;
};

struct AttractorReport {
  MapAttractor kind = MapAttractor::irregular;
  double diameter = 0.0;
  double mean_radius = 0.0;
  double spread = 0.0;
  double rotation_consistency = 0.0;
};

AttractorReport classify_map_attractor(const PoincareSeries& series, const AttractorOptions& options = {});
/// Planar points (already scaled).
AttractorReport classify_map_attractor(const std::vector<Vec>& points, const AttractorOptions& options = {});

// ---------------------------------------------------------------------------
// Torus canards

struct SpikeCycle {
  double t0 = 0.0;
  double t1 = 0.0;
  double extent = 0.0;
  double mean_m = 0.0;
  /// Change of mean M from the previous spike; defined when `follows`.
  double drift = 0.0;
  /// Directly preceded by another spike cycle.
  bool follows = false;
};

/// Apex-to-apex cycles of a trajectory; intervals longer than `max_isi` are
/// skipped.
std::vector<SpikeCycle> spike_cycles(const Trajectory& traj, std::size_t v_index, std::size_t m_index,
                                     double max_isi = 10.0, std::size_t apex_event = 0);

enum class CanardExit { none, to_attracting_fp, to_attracting_lc };
std::string to_string(CanardExit e);

struct CanardPassage {
  double fold_time = 0.0;
  double flip_time = 0.0;
  bool has_flip = false;
  double dwell = 0.0;
  std::size_t dwell_spikes = 0;
  double min_distance = 0.0;
  CanardExit exit = CanardExit::none;
  double exit_time = 0.0;
};

struct CanardOptions {
  /// Tube half-widths: fraction of the local V-extent and of the fold M.
  double tube_v = 0.10;
  double tube_m = 0.02;
  double max_isi = 10.0;
  /// Spikes after the dwell within which an exit must be seen.
  std::size_t exit_horizon = 200;
  std::size_t apex_event = 0;
  std::string slow = "M";
};

struct CanardMetrics {
  double fold_m = 0.0;
  double fold_extent = 0.0;
  double spike_period = 0.0;
  std::vector<CanardPassage> passages;
  /// Longest dwell and its spike count.
  double dwell = 0.0;
  std::size_t dwell_spikes = 0;
  double min_distance = 0.0;
  std::size_t exits_fp = 0;
  std::size_t exits_lc = 0;
  /// Largest |flip - fold passage| in spike periods.
  double max_flip_offset = 0.0;
  std::string note;
};

/// The cycle branch must contain a fold_lc; the equilibrium branch supplies
/// the attracting fixed points (may be empty).
CanardMetrics canard_metrics(const Trajectory& traj, const CycleBranch& cycles, const EquilibriumBranch& equilibria,
                             std::size_t v_index, std::size_t m_index, const CanardOptions& options = {});

/// `a` reversed followed by `b`; both must start from the same cycle.
CycleBranch join_branches(const CycleBranch& a, const CycleBranch& b);

}  // namespace canard
