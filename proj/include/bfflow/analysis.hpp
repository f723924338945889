#pragma once

// Measurements on operators and trajectories: the assembled pressure operator
// and its semigroup, log-linear decay fits and envelopes, the energy audit of
// the identity (1.eq), smoothing diagnostics and ensemble/attractor studies.

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bfflow/dynamics.hpp"
#include "bfflow/grid.hpp"
#include "bfflow/physics.hpp"

namespace bfflow {

using Series = std::vector<std::pair<double, double>>;

// ---------------------------------------------------------------------------
// Operator 𝔄 = -div(D (-lap)^{-1} grad) on mean-zero pressures

struct AssembledOperator {
  Grid grid;
  Eigen::MatrixXd matrix;        // m x m, m = n^d - 1
  Eigen::MatrixXd basis;         // n^d x m, orthonormal columns spanning the mean-zero fields
  Eigen::VectorXd spectrum;      // ascending
  Eigen::MatrixXd eigenvectors;  // columns match spectrum

  /// ||M - M^T||_F / ||M||_F.
  double symmetry_defect() const;
  double eigmin() const { return spectrum(0); }
  Eigen::VectorXd reduce(const ScalarField& p) const;  // basis^T p
  ScalarField lift(const Eigen::VectorXd& c) const;    // basis c
  /// exp(-t M) c.
  Eigen::VectorXd propagate(const Eigen::VectorXd& c, double t) const;
};

/// Column-by-column assembly with CG-solved Laplacians (tolerance 1e-12 or
/// better). Throws std::invalid_argument when n^d > 4096.
AssembledOperator assemble_operator(const Grid& g, const MediumMatrix& d);

// ---------------------------------------------------------------------------
// Fits

struct DecayFit {
  double c = 0.0;
  double rate = 0.0;
  double r_squared = 0.0;
  double t_start = 0.0;
  double t_end = 0.0;
};

/// Least squares on (t, log value) for the points with t in [t_start, t_end].
/// Throws std::invalid_argument on a nonpositive value or fewer than 5 points.
DecayFit fit_decay(const Series& series, double t_start, double t_end);

struct EnvelopeFit {
  double c = 0.0;
  double rate = 0.0;
  double max_excess = 0.0;  // max over all points of value / (c e^{rate t})
};

/// Majorant C e^{Kt} of the series on [t_start, t_end]: the upper-hull
/// supporting line in log space (at the mean time) of the even-indexed
/// samples; the odd-indexed samples are held out and only enter max_excess.
EnvelopeFit fit_envelope(const Series& series, double t_start, double t_end);

/// Worst (largest) fitted rate of log ||exp(-tM) p0||_{H^delta} over
/// `trials` random p0 drawn from `seed`, sampled at `samples` points of [0, t_max].
DecayFit semigroup_decay(const AssembledOperator& op, double delta, double t_max, int samples, int trials = 10,
                         std::uint64_t seed = 1);
/// Same measurement for one given initial pressure.
DecayFit semigroup_decay_from(const AssembledOperator& op, const ScalarField& p0, double delta, double t_max,
                              int samples);

// ---------------------------------------------------------------------------
// Norms on E = H^1_0 x L^2_mean-zero and E^1 = (H^2 ∩ H^1_0) x H^1_mean-zero

double e_norm(const VectorField& u, const ScalarField& p, const SineBasis& basis);
double e1_norm(const VectorField& u, const ScalarField& p, const SineBasis& basis);
/// E-distance from (u,p) to the ball {||.||_{E^1} <= radius}, exact in the sine basis.
double dist_to_e1_ball(const VectorField& u, const ScalarField& p, double radius, const SineBasis& basis);

// ---------------------------------------------------------------------------
// Energy audit

struct AuditOptions {
  double eps = 0.0;           // coupling of E_eps for the (1.Gp) surrogate; 0 disables it
  double gp_constant = 1.0;   // C in dE_eps/dt + eps E_eps <= C (eps^6 E^3 + ||g||^2 + 1)
  std::size_t gp_stride = 1;  // evaluate the surrogate at every gp_stride-th state
};

struct AuditResult {
  std::vector<double> times;      // interval end times
  std::vector<double> residuals;  // (E(t1)-E(t0))/2 + int (diss + f_work + b_work - g_work)
  double l1 = 0.0;                // sum of |residual|
  std::vector<double> gp_times;
  std::vector<double> gp_lhs;     // dE_eps/dt + eps E_eps
  std::vector<double> gp_rhs;
  int gp_violations = 0;
  double gp_worst = 0.0;          // max(lhs - rhs, 0)
};

/// Streaming form of energy_audit: push the states of a run in order.
class EnergyAuditor {
 public:
  EnergyAuditor(const Forcing& forcing, const Model& model, const AuditOptions& opts = {});
  void push(const SimState& s);
  const AuditResult& result() const { return result_; }

 private:
  struct Sample {
    double t = 0.0;
    double energy = 0.0;  // ||u||_D^2 + ||p||^2
    double q = 0.0;       // diss + f_work + b_work - g_work
    double dq = 0.0;      // dq/dt along the semi-discrete flow
  };
  Sample sample(const SimState& s, const Rates& r, const VectorField& g) const;

  Forcing forcing_;
  Model model_;
  AuditOptions opts_;
  std::optional<DirichletSolver> solver_;
  std::optional<Sample> last_;
  std::optional<SimState> last_state_;
  std::size_t count_ = 0;
  AuditResult result_;
};

/// Per-step residual of the discrete identity (1.eq) along a trajectory
/// stored at every step. Time integrals use the Hermite-corrected trapezoid
/// rule with exact time derivatives from the semi-discrete equations.
AuditResult energy_audit(const std::vector<SimState>& traj, const Forcing& forcing, const Model& model,
                         const AuditOptions& opts = {});

// ---------------------------------------------------------------------------
// Smoothing

struct SmoothingReport {
  std::string grid_tag;
  std::map<std::string, double> weighted_sups;  // keys below
  std::vector<double> times;
  std::map<std::string, std::vector<double>> series;
};

inline constexpr const char* kWeightGradU = "t*|grad u|^2";
inline constexpr const char* kWeightDtU = "t^2*|u_t|^2";
inline constexpr const char* kWeightDtP = "t*|p_t|^2";
inline constexpr const char* kWeightDtU83 = "t^(8/3)*|u_t|^2";

/// Sups over the stored states with 0 < t <= t_max; time derivatives from rhs_full.
SmoothingReport smoothing_report(const std::vector<SimState>& traj, const Forcing& forcing, const Model& model,
                                 double t_max = 1.0);

/// Runs the full system from s0 to t_max keeping states on a geometric time
/// grid (`per_decade` points per decade down to the first step).
std::vector<SimState> geometric_trajectory(const SimState& s0, const SolverConfig& cfg, const Forcing& forcing,
                                           const Model& model, double t_max, int per_decade);

// ---------------------------------------------------------------------------
// Ensembles

struct EnsembleOptions {
  std::size_t record_stride = 100;  // steps between recorded snapshots
  std::size_t reference = 0;        // designated member defining R
  int threads = 1;
  int box_scales = 6;
};

struct AttractorReport {
  std::size_t ensemble_size = 0;
  Series diam_series;
  Series dist_to_ball_series;
  double r_ball = 0.0;
  std::vector<std::pair<double, std::size_t>> box_counts;  // (box size, occupied boxes)
  std::vector<Series> e_norm_series;                       // per member
};

/// Throws BlowUpError naming the member index when a member diverges.
AttractorReport ensemble_study(const std::vector<SimState>& initial, const SolverConfig& cfg, const Forcing& forcing,
                               const Model& model, double t_max, const EnsembleOptions& opts = {});

/// Occupied boxes of the points normalized to their bounding box, for box
/// sizes 2^{1-scales}, ..., 1/2, 1 (ascending size, so counts are nonincreasing).
std::vector<std::pair<double, std::size_t>> box_counts(const std::vector<std::pair<double, double>>& points,
                                                       int scales);

}  // namespace bfflow
